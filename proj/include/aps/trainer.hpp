#pragma once

// Training loop. Each generator step: build the minibatch (with its masked and noised copies),
// run critic_steps critic updates against a detached prediction, then one generator update on
// beta1 * composite + beta2 * adversarial.
//
// Random streams, all derived from cfg.seed:
//   shuffle order of epoch e     CounterRng(seed, "shuffle", e)
//   corruption of window w, e    derive_key(seed, "corrupt", w, e)
//   interpolation weights        derive_key(seed, "gp", step, critic_iteration)
// so a run is fully determined by (epoch, batch, step) and can resume from any step.

#include <aps/autodiff/var.hpp>
#include <aps/config.hpp>
#include <aps/dataio.hpp>
#include <aps/model.hpp>
#include <aps/objectives.hpp>
#include <aps/optim.hpp>

#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace aps {

struct TrainState {
    std::size_t epoch = 0;
    std::size_t batch = 0; // next batch within the epoch
    std::size_t step = 0;  // generator steps taken
    AdamState generator;
    AdamState critic;

    bool operator==(const TrainState&) const = default;
};

struct LogRow {
    std::size_t step = 0;
    LossReport report;
};

inline std::vector<std::size_t> epoch_order(std::size_t windows, std::uint64_t seed, std::size_t epoch)
{
    std::vector<std::size_t> order(windows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(seed, "shuffle", epoch);
    for (std::size_t i = windows; i > 1; --i)
        std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

inline std::uint64_t corruption_seed(std::uint64_t seed, std::size_t window, std::size_t epoch)
{
    return derive_key(seed, "corrupt", window, epoch);
}

inline std::uint64_t interpolation_seed(std::uint64_t seed, std::size_t step, std::size_t critic_iter)
{
    return derive_key(seed, "gp", step, critic_iter);
}

class Trainer {
public:
    using Progress = std::function<void(const LogRow&)>;

    Trainer(const WindowedDataset& ds, const TrainConfig& cfg)
    {
        cfg.validate();
        if (ds.empty())
            fail(ErrorCode::InvalidArgument, "training dataset has no windows");
        if (ds.observed != cfg.observed || ds.future != cfg.future)
            fail(ErrorCode::DimsMismatch, "dataset windows do not match the configured lengths");
        model_ = make_model(cfg, ds.joints, ds.root_index, fit_normalizer(ds, cfg.flag_d));
        windows_ = prepare_dataset(model_, ds);
    }

    /// Continue from a saved model and state.
    Trainer(const WindowedDataset& ds, Model model, TrainState state)
        : model_(std::move(model)), state_(std::move(state))
    {
        if (ds.empty())
            fail(ErrorCode::InvalidArgument, "training dataset has no windows");
        windows_ = prepare_dataset(model_, ds);
    }

    const Model& model() const { return model_; }
    Model& model() { return model_; }
    const TrainState& state() const { return state_; }
    const std::vector<LogRow>& log() const { return log_; }
    const std::vector<PreparedWindow>& windows() const { return windows_; }
    const TrainConfig& config() const { return model_.cfg; }

    std::size_t batches_per_epoch() const
    {
        return (windows_.size() + model_.cfg.batch_size - 1) / model_.cfg.batch_size;
    }

    bool finished() const
    {
        const auto& c = model_.cfg;
        return state_.epoch >= c.epochs || (c.max_steps > 0 && state_.step >= c.max_steps);
    }

    /// One generator step (with its critic updates). Returns the logged row.
    LogRow step()
    {
        if (finished())
            fail(ErrorCode::InvalidArgument, "training already finished");
        try {
            return advance();
        } catch (const Error& e) {
            const std::string what = e.what();
            if (e.code() != ErrorCode::NumericalInstability || what.find(" step ") != std::string::npos)
                throw;
            throw Error(e.code(), what + " at training step " + std::to_string(state_.step + 1));
        }
    }

    /// Runs until the epoch budget or max_steps is reached, or `steps` more steps when nonzero.
    void run(std::size_t steps = 0, const Progress& progress = {})
    {
        ad::set_threads(model_.cfg.threads);
        for (std::size_t n = 0; !finished() && (steps == 0 || n < steps); ++n) {
            const LogRow row = step();
            if (progress)
                progress(row);
        }
    }

private:
    LogRow advance()
    {
        const auto& c = model_.cfg;
        const auto order = epoch_order(windows_.size(), c.seed, state_.epoch);
        const std::size_t lo = state_.batch * c.batch_size;
        const std::size_t hi = std::min(windows_.size(), lo + c.batch_size);
        std::vector<const PreparedWindow*> part;
        std::vector<std::uint64_t> seeds;
        for (std::size_t i = lo; i < hi; ++i) {
            part.push_back(&windows_[order[i]]);
            seeds.push_back(corruption_seed(c.seed, order[i], state_.epoch));
        }
        const StepBatch batch = make_step_batch(model_, part, seeds);
        const std::size_t step_index = state_.step + 1;

        double gp = 0.0;
        const auto critic_vars = model_.params.vars(ParamGroup::Critic);
        for (std::size_t k = 0; k < c.critic_steps; ++k) {
            ad::Var fake;
            {
                ad::NoGradGuard no_grad;
                fake = critic_window(model_, generate(model_, batch, true).pred, batch);
            }
            const CriticTerms ct = critic_objective(model_, batch, ad::detach(fake), interpolation_seed(c.seed, step_index, k));
            check_finite(ct.loss.item(), "critic loss", step_index);
            gp = ct.gp_term.item();
            guarded_update(ct.loss, critic_vars, state_.critic, step_index);
        }

        const GeneratorTerms gt = generator_objective(model_, batch);
        LogRow row;
        row.step = step_index;
        row.report.l_pred = gt.composite.l_pred.item();
        row.report.l_mask = gt.composite.l_mask.item();
        row.report.l_denoise = gt.composite.l_denoise.item();
        row.report.l_composite = gt.composite.l_composite.item();
        row.report.l_adv = gt.l_adv.item();
        row.report.gp_term = gp;
        row.report.l_total = gt.total.item();
        check_finite(row.report.l_total, "generator loss", step_index);
        guarded_update(gt.total, model_.params.vars(ParamGroup::Generator), state_.generator, step_index);

        state_.step = step_index;
        if (++state_.batch >= batches_per_epoch()) {
            state_.batch = 0;
            ++state_.epoch;
        }
        log_.push_back(row);
        return row;
    }

    static void check_finite(double v, const char* what, std::size_t step)
    {
        if (!std::isfinite(v))
            fail(ErrorCode::NumericalInstability, std::string(what) + " is not finite at step " + std::to_string(step));
    }

    void guarded_update(const ad::Var& loss, const std::vector<ad::Var>& vars, AdamState& state, std::size_t step)
    {
        try {
            adam_minimize(loss, vars, state, model_.cfg.lr, model_.cfg.grad_clip);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::AbortStep)
                throw;
            throw Error(ErrorCode::AbortStep, std::string(e.what()) + " at training step " + std::to_string(step));
        }
    }

    Model model_;
    std::vector<PreparedWindow> windows_;
    TrainState state_;
    std::vector<LogRow> log_;
};

struct TrainResult {
    Model model;
    TrainState state;
    std::vector<LogRow> log;
};

inline TrainResult train(const WindowedDataset& ds, const TrainConfig& cfg, const Trainer::Progress& progress = {})
{
    Trainer t(ds, cfg);
    t.run(0, progress);
    return {t.model(), t.state(), t.log()};
}

inline std::string log_csv_header() { return "step,l_pred,l_mask,l_denoise,l_adv,gp_term,l_total\n"; }

inline std::string log_csv_row(const LogRow& r)
{
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.report.l_pred,
                  r.report.l_mask, r.report.l_denoise, r.report.l_adv, r.report.gp_term, r.report.l_total);
    return buf;
}

inline std::string log_csv(const std::vector<LogRow>& rows)
{
    std::string out = log_csv_header();
    for (const auto& r : rows)
        out += log_csv_row(r);
    return out;
}

} // namespace aps
