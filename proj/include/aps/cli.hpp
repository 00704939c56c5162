#pragma once

// Command-line front end: synth, transform, perturb, train, predict, eval.
// Settings resolve as flag > --config file > built-in default. Failures print one line
//   error code=<CODE> subcommand=<name> message="<text>"
// to the error stream and exit 2 (usage), 3 (data) or 4 (numeric).

#include <aps/checkpoint.hpp>
#include <aps/config.hpp>
#include <aps/dataio.hpp>
#include <aps/error.hpp>
#include <aps/eval.hpp>
#include <aps/model.hpp>
#include <aps/perturbation.hpp>
#include <aps/quotient.hpp>
#include <aps/trainer.hpp>

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace aps::cli {

inline int exit_code(ErrorKind k)
{
    switch (k) {
    case ErrorKind::Usage: return 2;
    case ErrorKind::Data: return 3;
    case ErrorKind::Numeric: return 4;
    }
    return 3;
}

inline std::string error_line(const std::string& code, const std::string& subcommand, std::string message)
{
    for (auto& c : message)
        if (c == '\n' || c == '\r')
            c = ' ';
    std::string escaped;
    for (char c : message) {
        if (c == '"' || c == '\\')
            escaped += '\\';
        escaped += c;
    }
    return "error code=" + code + " subcommand=" + (subcommand.empty() ? "-" : subcommand) + " message=\"" +
           escaped + "\"";
}

/// Flags shared by the training-related subcommands, kept optional so precedence can be applied.
struct TrainFlags {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::optional<double> fps, pm, pn, sigma, alpha1, alpha2, beta1, beta2, lambda, lr;
    std::optional<std::size_t> epochs, batch, steps, observed, future, stride;
    bool ablate_d = false, ablate_e = false, ablate_l = false;

    void attach(CLI::App* app, bool training)
    {
        app->add_option("--config", config, "key = value config file");
        app->add_option("--seed", seed, "root random seed");
        app->add_option("--threads", threads, "worker threads (1 = strict single-thread mode)");
        app->add_option("--fps", fps, "frame rate sequences are resampled to");
        app->add_option("--observed", observed, "observed frames per window");
        app->add_option("--future", future, "predicted frames per window");
        app->add_option("--stride", stride, "window stride");
        if (!training)
            return;
        app->add_option("--pm", pm, "mask probability");
        app->add_option("--pn", pn, "noise probability");
        app->add_option("--sigma", sigma, "noise std (per-channel std units)");
        app->add_option("--alpha1", alpha1, "mask reconstruction weight");
        app->add_option("--alpha2", alpha2, "denoising weight");
        app->add_option("--beta1", beta1, "composite loss weight");
        app->add_option("--beta2", beta2, "adversarial loss weight");
        app->add_option("--lambda", lambda, "gradient penalty weight");
        app->add_option("--lr", lr, "Adam learning rate");
        app->add_option("--epochs", epochs, "training epochs");
        app->add_option("--batch", batch, "batch size");
        app->add_option("--steps", steps, "stop after this many generator steps (0 = no limit)");
        app->add_flag("--ablate-d", ablate_d, "raw root-aligned coordinates instead of quotient features");
        app->add_flag("--ablate-e", ablate_e, "disable the masked / noised auxiliary tasks");
        app->add_flag("--ablate-l", ablate_l, "plain full attention instead of low-rank gated attention");
    }

    TrainConfig resolve() const
    {
        TrainConfig c;
        if (config)
            apply_config_file(c, *config);
        auto set = [](auto& field, const auto& opt) {
            if (opt)
                field = *opt;
        };
        set(c.seed, seed);
        set(c.threads, threads);
        set(c.fps, fps);
        set(c.p_m, pm);
        set(c.p_n, pn);
        set(c.sigma, sigma);
        set(c.alpha1, alpha1);
        set(c.alpha2, alpha2);
        set(c.beta1, beta1);
        set(c.beta2, beta2);
        set(c.lambda, lambda);
        set(c.lr, lr);
        set(c.epochs, epochs);
        set(c.batch_size, batch);
        set(c.max_steps, steps);
        set(c.observed, observed);
        set(c.future, future);
        set(c.stride, stride);
        if (ablate_d)
            c.flag_d = false;
        if (ablate_e)
            c.flag_e = false;
        if (ablate_l)
            c.flag_l = false;
        c.validate();
        return c;
    }
};

inline std::vector<MotionSequence> load_sequences(const std::vector<std::string>& paths, double fps)
{
    if (paths.empty())
        fail(ErrorCode::InvalidArgument, "no input sequences given");
    std::vector<MotionSequence> out;
    for (const auto& p : paths) {
        MotionSequence s = load_mqs(p);
        if (s.fps != fps)
            s = downsample(s, fps);
        out.push_back(std::move(s));
    }
    return out;
}

inline std::filesystem::path ensure_dir(const std::string& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        fail(ErrorCode::IoError, "cannot create directory " + dir + ": " + ec.message());
    return dir;
}

inline std::vector<int> parse_horizons(const std::string& text)
{
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto t = detail::trim(item);
        if (t.empty())
            continue;
        out.push_back(detail::parse_number<int>("horizons", t));
    }
    return out;
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"quotient-space motion prediction toolkit", "aps"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    // synth
    auto* synth = app.add_subcommand("synth", "write synthetic MQS sequences");
    std::string kind = "sinusoid";
    std::size_t joints = 5, frames = 60, count = 1;
    double synth_fps = 25.0, amplitude = 50.0, period = SynthOptions{}.period_s;
    std::uint64_t synth_seed = 0;
    std::optional<std::string> action;
    std::string synth_out;
    synth->add_option("--kind", kind, "sinusoid | random_walk | constant")->capture_default_str();
    synth->add_option("--joints", joints)->capture_default_str();
    synth->add_option("--frames", frames)->capture_default_str();
    synth->add_option("--fps", synth_fps)->capture_default_str();
    synth->add_option("--seed", synth_seed)->capture_default_str();
    synth->add_option("--amplitude", amplitude, "mm")->capture_default_str();
    synth->add_option("--period", period, "sinusoid base period, seconds")->capture_default_str();
    synth->add_option("--count", count, "number of sequences (seeds seed, seed+1, ...)")->capture_default_str();
    synth->add_option("--action", action, "action label written to the header");
    synth->add_option("--out", synth_out, "output file (count 1) or directory")->required();

    // transform
    auto* transform = app.add_subcommand("transform", "MQS -> MQQ quotient representation");
    std::string transform_in, transform_out;
    transform->add_option("input", transform_in)->required();
    transform->add_option("--out", transform_out)->required();

    // perturb
    auto* perturb = app.add_subcommand("perturb", "masked and noised copies of an MQS sequence");
    std::string perturb_in, perturb_out;
    std::optional<double> perturb_pm, perturb_pn, perturb_sigma;
    std::optional<std::uint64_t> perturb_seed;
    std::optional<std::string> perturb_config;
    perturb->add_option("input", perturb_in)->required();
    perturb->add_option("--config", perturb_config);
    perturb->add_option("--seed", perturb_seed);
    perturb->add_option("--pm", perturb_pm);
    perturb->add_option("--pn", perturb_pn);
    perturb->add_option("--sigma", perturb_sigma, "noise std in units of each axis' std over the sequence");
    perturb->add_option("--out", perturb_out, "output prefix")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model on MQS sequences");
    TrainFlags train_flags;
    std::vector<std::string> train_inputs;
    std::string train_out;
    std::optional<std::string> resume;
    train_flags.attach(train_cmd, true);
    train_cmd->add_option("inputs", train_inputs, "MQS files")->required();
    train_cmd->add_option("--out", train_out, "output directory (checkpoint.bin, train_log.csv)")->required();
    train_cmd->add_option("--resume", resume, "continue from a checkpoint");

    // predict
    auto* predict_cmd = app.add_subcommand("predict", "predict future frames after an observation");
    std::string predict_ckpt, predict_in, predict_out;
    predict_cmd->add_option("--checkpoint", predict_ckpt)->required();
    predict_cmd->add_option("input", predict_in, "MQS observation; its last `observed` frames are used")->required();
    predict_cmd->add_option("--out", predict_out)->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "horizon-wise MPJPE report");
    std::string eval_ckpt;
    std::vector<std::string> eval_inputs;
    std::string horizons_text = "80,160,320,400,560,1000";
    std::string eval_out;
    std::optional<std::string> svg;
    bool baseline = false;
    eval_cmd->add_option("--checkpoint", eval_ckpt);
    eval_cmd->add_flag("--last-frame-baseline", baseline, "evaluate the repeat-last-frame predictor instead");
    eval_cmd->add_option("inputs", eval_inputs, "MQS files")->required();
    eval_cmd->add_option("--horizons", horizons_text, "comma-separated milliseconds")->capture_default_str();
    eval_cmd->add_option("--out", eval_out, "output directory (eval.csv)")->required();
    eval_cmd->add_option("--svg", svg, "also write a line chart");
    TrainFlags eval_flags;
    eval_flags.attach(eval_cmd, false);

    std::vector<std::string> argv_store = args;
    argv_store.insert(argv_store.begin(), "aps");
    std::vector<char*> argv;
    for (auto& a : argv_store)
        argv.push_back(a.data());

    std::string sub;
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        if (!app.get_subcommands().empty())
            sub = app.get_subcommands().front()->get_name();
        err << error_line("UsageError", sub, e.what()) << "\n";
        return 2;
    }
    sub = app.get_subcommands().front()->get_name();

    try {
        if (*synth) {
            SynthOptions opt;
            opt.kind = parse_synth_kind(kind);
            opt.joints = joints;
            opt.frames = frames;
            opt.fps = synth_fps;
            opt.amplitude = amplitude;
            opt.period_s = period;
            if (count == 0)
                fail(ErrorCode::InvalidArgument, "count must be positive");
            for (std::size_t i = 0; i < count; ++i) {
                opt.seed = synth_seed + i;
                MotionSequence s = synth_generate(opt);
                s.action = action;
                std::string path = synth_out;
                if (count > 1) {
                    char name[32];
                    std::snprintf(name, sizeof(name), "seq_%03zu.mqs", i);
                    path = (ensure_dir(synth_out) / name).string();
                }
                write_text_file(path, write_mqs(s));
                out << "wrote " << path << "\n";
            }
        } else if (*transform) {
            const MotionSequence s = load_mqs(transform_in);
            write_text_file(transform_out, write_mqq(encode_quotient(s)));
            out << "wrote " << transform_out << "\n";
        } else if (*perturb) {
            TrainConfig c;
            if (perturb_config)
                apply_config_file(c, *perturb_config);
            if (perturb_seed)
                c.seed = *perturb_seed;
            if (perturb_pm)
                c.p_m = *perturb_pm;
            if (perturb_pn)
                c.p_n = *perturb_pn;
            if (perturb_sigma)
                c.sigma = *perturb_sigma;
            c.flag_e = true;
            c.validate();
            const MotionSequence s = load_mqs(perturb_in);
            FeatureTensor coords = coordinates_tensor(s);
            std::vector<double> sd(3, 0.0), mean(3, 0.0);
            for (std::size_t i = 0; i < coords.size(); ++i)
                mean[i % 3] += coords.data[i] / static_cast<double>(coords.size() / 3);
            for (std::size_t i = 0; i < coords.size(); ++i)
                sd[i % 3] += (coords.data[i] - mean[i % 3]) * (coords.data[i] - mean[i % 3]) /
                             static_cast<double>(coords.size() / 3);
            for (auto& v : sd)
                v = v > 0.0 ? std::sqrt(v) : 1.0;
            const CorruptedTensor masked = apply_mask(coords, c.p_m, mask_stream_seed(c.seed), c.joint_mask);
            CorruptedTensor noised = apply_noise(FeatureTensor(coords.frames, coords.joints, 3), c.p_n, c.sigma,
                                                 noise_stream_seed(c.seed));
            for (std::size_t i = 0; i < coords.size(); ++i)
                noised.values.data[i] = coords.data[i] + noised.values.data[i] * sd[i % 3];
            write_text_file(perturb_out + ".masked.mqs", write_mqs(sequence_from_tensor(masked.values, s)));
            write_text_file(perturb_out + ".masked.mask", write_mask_sidecar(masked.mask));
            write_text_file(perturb_out + ".noised.mqs", write_mqs(sequence_from_tensor(noised.values, s)));
            write_text_file(perturb_out + ".noised.mask", write_mask_sidecar(noised.mask));
            out << "wrote " << perturb_out << ".{masked,noised}.{mqs,mask}\n";
        } else if (*train_cmd) {
            const auto dir = ensure_dir(train_out);
            std::optional<Checkpoint> ck;
            if (resume)
                ck = load_checkpoint(*resume);
            TrainConfig c = ck ? ck->model.cfg : train_flags.resolve();
            if (ck) {
                if (train_flags.epochs)
                    c.epochs = *train_flags.epochs;
                if (train_flags.steps)
                    c.max_steps = *train_flags.steps;
                if (train_flags.threads)
                    c.threads = *train_flags.threads;
                ck->model.cfg = c;
            }
            const auto seqs = load_sequences(train_inputs, c.fps);
            const WindowedDataset ds = make_windows(seqs, c.observed, c.future, c.stride);
            for (const auto& w : ds.warnings)
                err << "warning: " << w << "\n";
            Trainer trainer = ck ? Trainer(ds, std::move(ck->model), std::move(ck->state)) : Trainer(ds, c);
            const std::string log_path = (dir / "train_log.csv").string();
            std::string log = log_csv_header();
            if (ck && std::filesystem::exists(log_path))
                log = read_text_file(log_path);
            trainer.run(0, [&](const LogRow& r) {
                log += log_csv_row(r);
                if (r.step % 50 == 0)
                    err << "step " << r.step << " l_pred " << r.report.l_pred << " l_total " << r.report.l_total
                        << "\n";
            });
            write_text_file(log_path, log);
            save_checkpoint(trainer.model(), trainer.state(), (dir / "checkpoint.bin").string());
            out << "trained " << trainer.state().step << " steps; wrote " << (dir / "checkpoint.bin").string()
                << " and " << log_path << "\n";
        } else if (*predict_cmd) {
            const Checkpoint ck = load_checkpoint(predict_ckpt);
            const Model& m = ck.model;
            MotionSequence obs = load_mqs(predict_in);
            if (obs.fps != m.cfg.fps)
                obs = downsample(obs, m.cfg.fps);
            if (obs.length() < m.cfg.observed)
                fail(ErrorCode::WindowTooShort, "observation has " + std::to_string(obs.length()) +
                                                    " frames, model needs " + std::to_string(m.cfg.observed));
            const std::vector<Pose> window(obs.frames.end() - static_cast<std::ptrdiff_t>(m.cfg.observed),
                                           obs.frames.end());
            const MotionSequence pred(predict(m, window), m.cfg.fps, obs.skeleton, obs.action);
            write_text_file(predict_out, write_mqs(pred));
            out << "wrote " << predict_out << "\n";
        } else if (*eval_cmd) {
            const HorizonSpec horizons(parse_horizons(horizons_text));
            std::optional<Checkpoint> ck;
            TrainConfig c = eval_flags.resolve();
            if (!baseline) {
                if (eval_ckpt.empty())
                    fail(ErrorCode::InvalidArgument, "eval needs --checkpoint or --last-frame-baseline");
                ck = load_checkpoint(eval_ckpt);
                c = ck->model.cfg;
            }
            if (eval_flags.threads)
                ad::set_threads(*eval_flags.threads);
            const auto seqs = load_sequences(eval_inputs, c.fps);
            const WindowedDataset ds = make_windows(seqs, c.observed, c.future, c.stride);
            for (const auto& w : ds.warnings)
                err << "warning: " << w << "\n";
            const Predictor p = ck ? model_predictor(ck->model) : last_frame_predictor(c.future);
            const HorizonReport r = evaluate(p, ds, horizons);
            out << report_table(r);
            const auto dir = ensure_dir(eval_out);
            write_text_file((dir / "eval.csv").string(), report_csv(r));
            if (svg)
                write_text_file(*svg, report_svg(r));
        }
    } catch (const Error& e) {
        err << error_line(std::string(to_string(e.code())), sub, e.what()) << "\n";
        return exit_code(kind_of(e.code()));
    } catch (const std::exception& e) {
        err << error_line("InternalError", sub, e.what()) << "\n";
        return 3;
    }
    return 0;
}

} // namespace aps::cli
