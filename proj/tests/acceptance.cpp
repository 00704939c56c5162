// Acceptance runner: one [PASS] line on stdout or [FAIL] line on stderr per criterion.
// Exit status is the number of failed criteria.

#include "fixtures.hpp"
#include "support.hpp"

#include <aps/checkpoint.hpp>
#include <aps/cli.hpp>
#include <aps/eval.hpp>
#include <aps/objectives.hpp>
#include <aps/perturbation.hpp>
#include <aps/quotient.hpp>
#include <aps/trainer.hpp>

#include <chrono>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

using namespace aps;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

class Clock {
public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b)
{
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

Vec3 random_vec(CounterRng& rng, double scale)
{
    return {rng.uniform(-scale, scale), rng.uniform(-scale, scale), rng.uniform(-scale, scale)};
}

// ---------------------------------------------------------------------------------------------

Outcome grassmann_identity()
{
    Clock clock;
    CounterRng rng(101, "accept.grassmann");
    double worst = 0.0;
    std::size_t n = 0;
    while (n < 100000) {
        const Vec3 v = random_vec(rng, std::pow(10.0, rng.uniform(-6.0, 6.0)));
        if (norm(v) == 0.0)
            continue;
        double sum = 0.0;
        for (Plane p : kPlanes) {
            const auto c = orthogonal_cosine(v, p);
            sum += c.value * c.value;
        }
        worst = std::max(worst, std::abs(sum - 2.0));
        ++n;
    }
    const double t = clock.seconds();
    return {worst <= 1e-9 && t < 5.0, fmt("%zu velocities, max |sum - 2| %.2e, %.2f s", n, worst, t)};
}

Outcome quotient_round_trip()
{
    CounterRng rng(102, "accept.roundtrip");
    double comp = 0.0;
    for (int i = 0; i < 10000; ++i) {
        Vec3 v = random_vec(rng, 100.0);
        const MotionSequence s({Pose(std::vector<Vec3>{{0, 0, 0}}), Pose(std::vector<Vec3>{v})}, 25.0, Skeleton(1, 0));
        const Vec3 m = component_magnitudes(encode_quotient(s), 0, 0);
        for (int k = 0; k < 3; ++k)
            comp = std::max(comp, std::abs(m[k] - std::abs(v[k])));
    }
    double path = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t T = 2 + rng.below(49), J = 1 + rng.below(17);
        std::vector<Pose> frames;
        for (std::size_t t = 0; t < T; ++t) {
            Pose p(J);
            for (auto& v : p.joints)
                v = random_vec(rng, 1e4);
            frames.push_back(p);
        }
        const MotionSequence s(frames, 25.0, Skeleton(J, 0));
        const auto back = integrate_velocities(s.frames.front(), tangent_velocities(s));
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t j = 0; j < J; ++j)
                for (int k = 0; k < 3; ++k)
                    path = std::max(path, std::abs(back.frames[t][j][k] - s.frames[t][j][k]));
    }
    return {comp <= 1e-7 && path <= 1e-9,
            fmt("component error %.2e over 1e4 vectors, integrate/differentiate error %.2e over 100 sequences", comp,
                path)};
}

Outcome gradient_correctness()
{
    Clock clock;
    auto s = fixtures::tiny_setup();
    const auto d = s.model.dims;
    const auto r = fixtures::full_gradient_check(s.model, s.batch);
    const double t = clock.seconds();
    return {r.max_rel < 1e-4 && t < 60.0 && d.joints == 4 && d.window == 6 && d.d_model == 8 && d.rank == 2 &&
                d.layers == 1,
            fmt("%zu parameters, max relative error %.2e (at %s), %.1f s", r.checked, r.max_rel, r.worst.c_str(), t)};
}

Outcome gradient_penalty_oracle()
{
    CounterRng rng(104, "accept.gp");
    ad::Tensor w = testing::random_tensor({6, 1}, rng);
    double n2 = 0.0;
    for (double v : w.values())
        n2 += v * v;
    for (auto& v : w.values())
        v /= std::sqrt(n2);
    const ad::Var W = ad::constant(w);
    double linear = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto real = ad::constant(testing::random_tensor({5, 6}, rng, 10.0));
        const auto fake = ad::constant(testing::random_tensor({5, 6}, rng, 10.0));
        const auto t = loss_adversarial([W](const ad::Var& x) { return ad::matmul(x, W); }, real, fake, 10.0, seed);
        linear = std::max(linear, std::abs(t.gp_term.item()));
    }

    const Critic zero = [](const ad::Var& x) { return ad::scale(ad::sum_last(x), 0.0); };
    const auto x = ad::constant(testing::random_tensor({4, 3}, rng)), y = ad::constant(testing::random_tensor({4, 3}, rng));
    const auto z = loss_adversarial(zero, x, y, 10.0, 3);
    const bool zero_ok = z.gp_term.item() == 10.0 && z.critic_loss.item() - z.gp_term.item() == 0.0;

    const fixtures::LoopCritic mlp(5, 7, 21);
    std::vector<double> real(20), fake(20);
    for (auto& v : real)
        v = rng.uniform(-2.0, 2.0);
    for (auto& v : fake)
        v = rng.uniform(-2.0, 2.0);
    const std::vector<double> eps{0.1, 0.35, 0.6, 0.95};
    const auto want = mlp.wgan_gp(real, fake, eps, 10.0);
    const auto got = loss_adversarial(mlp.as_autodiff(), ad::constant(ad::Tensor({4, 5}, real)),
                                      ad::constant(ad::Tensor({4, 5}, fake)), 10.0, eps);
    const double diff = std::abs(got.critic_loss.item() - want.critic_loss);
    return {linear == 0.0 && zero_ok && diff <= 1e-10,
            fmt("linear critic gp %.1e, zero critic gp %.17g, plain-loop difference %.2e", linear, z.gp_term.item(),
                diff)};
}

Outcome loss_assembly()
{
    CounterRng rng(105, "accept.loss");
    double worst_comp = 0.0, worst_total = 0.0;
    bool local = true, mutant_caught = true;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t tf = 1 + rng.below(8), tp = 2 + rng.below(10), J = 1 + rng.below(6);
        const auto pred = testing::random_tensor({1, tf, J, 3}, rng, 5.0);
        const auto fut = testing::random_tensor({1, tf, J, 3}, rng, 5.0);
        const auto mrec = testing::random_tensor({1, tp, J, 3}, rng, 5.0);
        const auto drec = testing::random_tensor({1, tp, J, 3}, rng, 5.0);
        const auto obs = testing::random_tensor({1, tp, J, 3}, rng, 5.0);
        ad::Tensor mj({1, tp, J, 1}, 0.0);
        for (auto& m : mj.values())
            m = rng.bernoulli(0.3) ? 1.0 : 0.0;
        LossWeights w;
        w.alpha1 = rng.uniform(0.0, 3.0);
        w.alpha2 = rng.uniform(0.0, 3.0);
        w.beta1 = rng.uniform(0.0, 2.0);
        w.beta2 = rng.uniform(0.0, 2.0);
        auto f = [&](const ad::Var& mr) {
            return loss_composite(ad::constant(pred), mr, ad::constant(drec), ad::constant(fut), ad::constant(obs), mj, w);
        };
        const CompositeLoss c = f(ad::constant(mrec));
        LossReport r;
        r.l_pred = c.l_pred.item();
        r.l_mask = c.l_mask.item();
        r.l_denoise = c.l_denoise.item();
        r.l_composite = c.l_composite.item();
        r.l_adv = rng.uniform(-20.0, 20.0);
        r.l_total = loss_total(ad::constant(ad::Tensor::scalar(r.l_composite)),
                               ad::constant(ad::Tensor::scalar(r.l_adv)), w)
                        .item();
        const double comp = r.l_pred + w.alpha1 * r.l_mask + w.alpha2 * r.l_denoise;
        worst_comp = std::max(worst_comp, std::abs(r.l_composite - comp) / std::max(1.0, std::abs(comp)));
        const double tot = w.beta1 * r.l_composite + w.beta2 * r.l_adv;
        worst_total = std::max(worst_total, std::abs(r.l_total - tot) / std::max(1.0, std::abs(tot)));
        worst_total = std::max(worst_total, std::abs(loss_total(r, w) - tot) / std::max(1.0, std::abs(tot)));

        if (c.masked_joints == 0 || c.masked_joints == mj.size())
            continue;
        local = local && fixtures::mask_term_is_local(f, mrec, mj, static_cast<std::uint64_t>(trial));
        // the same check applied to an l_mask that averages over every joint must fail
        auto mutant = [&](const ad::Var& mr) {
            CompositeLoss m = f(mr);
            m.l_mask = ad::mean_all(joint_sq_error(mr, ad::constant(obs)));
            return m;
        };
        mutant_caught = mutant_caught && !fixtures::mask_term_is_local(mutant, mrec, mj, static_cast<std::uint64_t>(trial));
    }
    return {worst_comp <= 1e-12 && worst_total <= 1e-12 && local && mutant_caught,
            fmt("composite identity %.1e, total identity %.1e, locality %s, mutant %s", worst_comp, worst_total,
                local ? "holds" : "broken", mutant_caught ? "caught" : "missed")};
}

Outcome corruption_statistics()
{
    constexpr double z = 3.2905267314919255; // two-sided 99.9%
    FeatureTensor f(1000, 25, 4);
    CounterRng rng(106, "accept.corruption");
    for (auto& x : f.data)
        x = rng.uniform(-5.0, 5.0);
    const double n = static_cast<double>(f.size());
    std::vector<std::string> bad;
    auto in_ci = [&](const char* what, double frac, double p) {
        if (std::abs(frac - p) > z * std::sqrt(p * (1.0 - p) / n))
            bad.push_back(fmt("%s fraction %.5f outside CI around %.2f", what, frac, p));
    };

    const auto m = apply_mask(f, 0.1, mask_stream_seed(1));
    in_ci("mask", static_cast<double>(m.mask.count()) / n, 0.1);
    const auto k = apply_noise(f, 0.15, 0.5, noise_stream_seed(1));
    in_ci("noise", static_cast<double>(k.mask.count()) / n, 0.15);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const bool m_keep = !m.mask.flags[i], k_keep = !k.mask.flags[i];
        if (m_keep && std::memcmp(&m.values.data[i], &f.data[i], sizeof(double)) != 0)
            ++changed;
        if (!m_keep && m.values.data[i] != 0.0)
            ++changed;
        if (k_keep && std::memcmp(&k.values.data[i], &f.data[i], sizeof(double)) != 0)
            ++changed;
    }
    if (changed)
        bad.push_back(fmt("%zu entries off the corruption changed", changed));

    const double sigma = 2.0;
    const auto all = apply_noise(f, 1.0, sigma, noise_stream_seed(2));
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double e = all.values.data[i] - f.data[i];
        sum += e;
        sq += e * e;
    }
    const double mean = sum / n, var = (sq - n * mean * mean) / (n - 1.0);
    if (std::abs(mean) > z * sigma / std::sqrt(n))
        bad.push_back(fmt("noise mean %.4f outside CI", mean));
    if (std::abs(var - sigma * sigma) > z * sigma * sigma * std::sqrt(2.0 / (n - 1.0)))
        bad.push_back(fmt("noise variance %.4f outside CI around %.1f", var, sigma * sigma));

    std::string detail = fmt("mask %.4f, noise %.4f, noise mean %.4f var %.4f over %.0f scalars",
                             static_cast<double>(m.mask.count()) / n, static_cast<double>(k.mask.count()) / n, mean, var, n);
    for (const auto& b : bad)
        detail += "; " + b;
    return {bad.empty(), detail};
}

// Shared by the smoke and ablation criteria.
struct SmokeRun {
    std::vector<LogRow> log;
    std::vector<double> eval_mm;
    double seconds = 0.0;
    std::string error;
};

std::vector<LogRow> read_log(const std::string& path)
{
    std::istringstream in(read_text_file(path));
    std::string line;
    std::getline(in, line);
    std::vector<LogRow> rows;
    while (std::getline(in, line)) {
        std::vector<double> v;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            v.push_back(std::stod(cell));
        LogRow r;
        r.step = static_cast<std::size_t>(v.at(0));
        r.report.l_pred = v.at(1);
        r.report.l_mask = v.at(2);
        r.report.l_denoise = v.at(3);
        r.report.l_adv = v.at(4);
        r.report.gp_term = v.at(5);
        r.report.l_total = v.at(6);
        rows.push_back(r);
    }
    return rows;
}

std::vector<double> read_eval_average(const std::string& path)
{
    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line))
        if (line.rfind("average,", 0) == 0) {
            std::vector<double> v;
            std::stringstream ss(line.substr(8));
            std::string cell;
            while (std::getline(ss, cell, ','))
                v.push_back(std::stod(cell));
            return v;
        }
    return {};
}

// synth -> train (500 steps, default config apart from an epoch budget that lets 500 steps run) -> eval
// through the command-line front end
SmokeRun smoke_run(const fs::path& root, const std::string& name, const std::vector<std::string>& extra)
{
    SmokeRun r;
    Clock clock;
    std::ostringstream out, err;
    const fs::path data = root / "data";
    if (!fs::exists(data / "seq_001.mqs") &&
        cli::run({"synth", "--count", "2", "--joints", "5", "--frames", "60", "--fps", "25", "--out", data.string()},
                 out, err) != 0) {
        r.error = err.str();
        return r;
    }
    const fs::path dir = root / name;
    std::vector<std::string> args{"train", (data / "seq_000.mqs").string(), (data / "seq_001.mqs").string(),
                                  "--observed", "10", "--future", "25", "--steps", "500", "--epochs", "1000",
                                  "--out", dir.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    if (cli::run(args, out, err) != 0) {
        r.error = err.str();
        return r;
    }
    if (cli::run({"eval", "--checkpoint", (dir / "checkpoint.bin").string(), (data / "seq_000.mqs").string(),
                  (data / "seq_001.mqs").string(), "--out", (dir / "eval").string()},
                 out, err) != 0) {
        r.error = err.str();
        return r;
    }
    r.log = read_log((dir / "train_log.csv").string());
    r.eval_mm = read_eval_average((dir / "eval" / "eval.csv").string());
    r.seconds = clock.seconds();
    return r;
}

const SmokeRun& full_smoke(const fs::path& root)
{
    static const SmokeRun run = smoke_run(root, "full", {});
    return run;
}

Outcome overfit_smoke(const fs::path& root)
{
    const SmokeRun& r = full_smoke(root);
    if (!r.error.empty())
        return {false, "pipeline failed: " + r.error};
    if (r.log.size() != 500 || r.eval_mm.size() != 6)
        return {false, fmt("expected 500 log rows and 6 horizons, got %zu and %zu", r.log.size(), r.eval_mm.size())};
    const double first = r.log.front().report.l_pred, last = r.log.back().report.l_pred;
    const double ratio = last / first;
    const bool ok = ratio < 0.01 && r.eval_mm.front() < r.eval_mm.back() && r.seconds < 300.0;
    return {ok, fmt("l_pred %.4g -> %.4g (%.2f%% of step 1), MPJPE 80 ms %.2f mm vs 1000 ms %.2f mm, %.0f s", first,
                    last, 100.0 * ratio, r.eval_mm.front(), r.eval_mm.back(), r.seconds)};
}

Outcome ablation_contract(const fs::path& root)
{
    const SmokeRun& full = full_smoke(root);
    const SmokeRun off = smoke_run(root, "ablate_e", {"--ablate-e"});
    if (!full.error.empty() || !off.error.empty())
        return {false, "run failed: " + full.error + off.error};
    bool logged = full.log.size() == 500 && off.log.size() == 500;
    for (const auto& row : full.log)
        logged = logged && row.report.l_mask > 0.0 && row.report.l_denoise > 0.0;
    for (const auto& row : off.log)
        logged = logged && row.report.l_mask == 0.0 && row.report.l_denoise == 0.0;
    const double f = full.log.back().report.l_pred, e = off.log.back().report.l_pred;
    return {logged && f < e, fmt("final l_pred full %.4g vs E disabled %.4g after 500 steps; flag columns %s", f, e,
                                 logged ? "consistent" : "inconsistent")};
}

Outcome determinism()
{
    const auto ds = fixtures::smoke_dataset();
    TrainConfig cfg;
    cfg.threads = 1;
    cfg.max_steps = 12;
    const auto a = train(ds, cfg);
    const auto b = train(ds, cfg);
    const bool runs = log_csv(a.log) == log_csv(b.log) && same_bits(a.model.params.flatten(), b.model.params.flatten());

    Trainer first(ds, cfg);
    first.run(5);
    const Checkpoint ck = deserialize_checkpoint(serialize_checkpoint(first.model(), first.state()));
    Trainer second(ds, ck.model, ck.state);
    second.run();
    std::vector<LogRow> joined = first.log();
    joined.insert(joined.end(), second.log().begin(), second.log().end());
    const bool resumed = log_csv(joined) == log_csv(a.log) &&
                         same_bits(second.model().params.flatten(), a.model.params.flatten()) &&
                         second.state().generator == a.state.generator && second.state().critic == a.state.critic;
    return {runs && resumed && a.log.size() == 12,
            fmt("repeat run %s, resume at step 5 to 12 %s", runs ? "bitwise equal" : "differs",
                resumed ? "bitwise equal" : "differs")};
}

Outcome protocol_fixtures()
{
    const std::vector<int> ms{80, 160, 320, 400, 560, 1000};
    const std::vector<std::size_t> want{2, 4, 8, 10, 14, 25};
    bool frames = true;
    for (std::size_t i = 0; i < ms.size(); ++i)
        frames = frames && horizon_to_frame(ms[i], 25.0) == want[i];

    CounterRng rng(110, "accept.mpjpe");
    Pose p(6);
    for (std::size_t j = 0; j < 6; ++j)
        p[j] = random_vec(rng, 500.0);
    Pose moved = p;
    for (std::size_t j = 0; j < 6; ++j)
        moved[j] = moved[j] + Vec3{5, 5, 5};
    const double same = mpjpe(p, p, 0), shift = mpjpe(moved, p, 0);
    const Pose truth(std::vector<Vec3>{{0, 0, 0}, {1, 2, 3}}), pred(std::vector<Vec3>{{0, 0, 0}, {4, 6, 3}});
    const double hand = mpjpe(pred, truth, 0);
    const bool ok = frames && std::abs(same) <= 1e-9 && std::abs(shift) <= 1e-9 && std::abs(hand - 2.5) <= 1e-9;
    return {ok, fmt("frames {2,4,8,10,14,25} %s; MPJPE identical %.1e, translated %.1e, (3,4,0) case %.12g",
                    frames ? "match" : "differ", same, shift, hand)};
}

} // namespace

int main()
{
    const fs::path root = fs::temp_directory_path() / "aps_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"1 grassmann identity", grassmann_identity},
        {"2 quotient round trip", quotient_round_trip},
        {"3 gradient correctness", gradient_correctness},
        {"4 gradient penalty oracle", gradient_penalty_oracle},
        {"5 loss assembly", loss_assembly},
        {"6 corruption statistics", corruption_statistics},
        {"7 overfit smoke training", [&] { return overfit_smoke(root); }},
        {"8 ablation contract", [&] { return ablation_contract(root); }},
        {"9 determinism and checkpointing", determinism},
        {"10 protocol fixtures", protocol_fixtures},
    };
    int failed = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (o.pass) {
            std::cout << "[PASS] " << name << ": " << o.detail << std::endl;
        } else {
            std::cerr << "[FAIL] " << name << ": " << o.detail << std::endl;
            ++failed;
        }
    }
    return failed;
}
