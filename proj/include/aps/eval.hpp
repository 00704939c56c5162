#pragma once

// Root-aligned MPJPE and horizon-wise reports.

#include <aps/dataio.hpp>
#include <aps/error.hpp>
#include <aps/model.hpp>
#include <aps/motion.hpp>

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace aps {

/// Mean Euclidean joint distance over frames and joints after aligning every frame to its root.
inline double mpjpe(const std::vector<Pose>& pred, const std::vector<Pose>& truth, std::size_t root_index)
{
    if (pred.size() != truth.size() || pred.empty())
        fail(ErrorCode::ShapeMismatch, "mpjpe needs equal, non-empty windows");
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < pred.size(); ++t) {
        if (pred[t].size() != truth[t].size())
            fail(ErrorCode::ShapeMismatch, "mpjpe frames differ in joint count");
        const Pose a = root_align(pred[t], root_index);
        const Pose b = root_align(truth[t], root_index);
        for (std::size_t j = 0; j < a.size(); ++j)
            total += norm(a[j] - b[j]);
        count += a.size();
    }
    return total / static_cast<double>(count);
}

inline double mpjpe(const Pose& pred, const Pose& truth, std::size_t root_index)
{
    return mpjpe(std::vector<Pose>{pred}, std::vector<Pose>{truth}, root_index);
}

inline double mpjpe(const MotionSequence& pred, const MotionSequence& truth)
{
    if (pred.skeleton.root_index != truth.skeleton.root_index)
        fail(ErrorCode::SkeletonMismatch, "sequences disagree on the root joint");
    return mpjpe(pred.frames, truth.frames, truth.skeleton.root_index);
}

/// Maps an observed window to its predicted future frames.
using Predictor = std::function<std::vector<Pose>(const MotionWindow&)>;

struct HorizonReport {
    std::vector<int> horizons_ms;
    std::vector<double> mean_mm; // per horizon
    std::map<std::string, std::vector<double>> per_action;
    std::size_t windows = 0;
};

/// Error at horizon h is the single-frame MPJPE of predicted frame horizon_to_frame(h), averaged
/// over windows (and per action label when the windows carry one).
inline HorizonReport evaluate(const Predictor& predictor, const WindowedDataset& ds, const HorizonSpec& horizons)
{
    horizons.validate();
    if (ds.empty())
        fail(ErrorCode::InvalidArgument, "evaluation dataset has no windows");
    std::vector<std::size_t> frames;
    for (int ms : horizons.milliseconds) {
        const std::size_t f = horizon_to_frame(ms, ds.fps);
        if (f > ds.future)
            fail(ErrorCode::WindowTooShort, "horizon " + std::to_string(ms) + " ms needs " + std::to_string(f) +
                                                " future frames, windows have " + std::to_string(ds.future));
        frames.push_back(f);
    }
    HorizonReport r;
    r.horizons_ms = horizons.milliseconds;
    r.mean_mm.assign(frames.size(), 0.0);
    r.windows = ds.size();
    std::map<std::string, std::pair<std::vector<double>, std::size_t>> actions;
    for (const auto& w : ds.windows) {
        const std::vector<Pose> pred = predictor(w);
        if (pred.size() < frames.back())
            fail(ErrorCode::WindowTooShort, "predictor returned " + std::to_string(pred.size()) + " frames");
        std::vector<double> errs(frames.size());
        for (std::size_t h = 0; h < frames.size(); ++h) {
            errs[h] = mpjpe(pred[frames[h] - 1], w.future[frames[h] - 1], ds.root_index);
            r.mean_mm[h] += errs[h];
        }
        if (w.action) {
            auto& [sum, n] = actions[*w.action];
            sum.resize(frames.size(), 0.0);
            for (std::size_t h = 0; h < frames.size(); ++h)
                sum[h] += errs[h];
            ++n;
        }
    }
    for (auto& v : r.mean_mm)
        v /= static_cast<double>(ds.size());
    for (auto& [name, acc] : actions) {
        auto means = acc.first;
        for (auto& v : means)
            v /= static_cast<double>(acc.second);
        r.per_action[name] = std::move(means);
    }
    return r;
}

inline Predictor model_predictor(const Model& m)
{
    return [&m](const MotionWindow& w) { return predict(m, w.observed); };
}

inline Predictor last_frame_predictor(std::size_t future)
{
    return [future](const MotionWindow& w) { return std::vector<Pose>(future, w.observed.back()); };
}

namespace detail {

inline std::string fixed1(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

} // namespace detail

/// Fixed-width text table, one decimal.
inline std::string report_table(const HorizonReport& r)
{
    auto row = [&](const std::string& label, const std::vector<double>& vals) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%-14s", label.c_str());
        std::string line = buf;
        for (double v : vals) {
            std::snprintf(buf, sizeof(buf), "%8s", detail::fixed1(v).c_str());
            line += buf;
        }
        return line + "\n";
    };
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-14s", "milliseconds");
    std::string out = buf;
    for (int ms : r.horizons_ms) {
        std::snprintf(buf, sizeof(buf), "%8d", ms);
        out += buf;
    }
    out += "\n";
    for (const auto& [name, vals] : r.per_action)
        out += row(name, vals);
    out += row("average", r.mean_mm);
    return out;
}

inline std::string report_csv(const HorizonReport& r)
{
    std::string out = "action";
    for (int ms : r.horizons_ms)
        out += "," + std::to_string(ms);
    out += "\n";
    auto row = [&](const std::string& name, const std::vector<double>& vals) {
        out += name;
        for (double v : vals)
            out += "," + format_real(v);
        out += "\n";
    };
    for (const auto& [name, vals] : r.per_action)
        row(name, vals);
    row("average", r.mean_mm);
    return out;
}

/// Line chart of average error against horizon.
inline std::string report_svg(const HorizonReport& r)
{
    const double W = 480, H = 300, left = 60, right = 20, top = 20, bottom = 40;
    const double xmax = r.horizons_ms.back();
    double ymax = 0.0;
    for (double v : r.mean_mm)
        ymax = std::max(ymax, v);
    if (ymax <= 0.0)
        ymax = 1.0;
    auto x = [&](double ms) { return left + (W - left - right) * ms / xmax; };
    auto y = [&](double mm) { return H - bottom - (H - top - bottom) * mm / ymax; };
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf),
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" viewBox=\"0 0 %g %g\">\n", W, H,
                  W, H);
    out += buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n"
                  "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                  left, H - bottom, W - right, H - bottom, left, top, left, H - bottom);
    out += buf;
    out += "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < r.horizons_ms.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%s%.2f,%.2f", i ? " " : "", x(r.horizons_ms[i]), y(r.mean_mm[i]));
        out += buf;
    }
    out += "\"/>\n";
    for (std::size_t i = 0; i < r.horizons_ms.size(); ++i) {
        std::snprintf(buf, sizeof(buf),
                      "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"steelblue\"/>\n"
                      "<text x=\"%.2f\" y=\"%g\" font-size=\"10\" text-anchor=\"middle\">%d</text>\n",
                      x(r.horizons_ms[i]), y(r.mean_mm[i]), x(r.horizons_ms[i]), H - bottom + 14, r.horizons_ms[i]);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%g\" y=\"%g\" font-size=\"11\" text-anchor=\"middle\">horizon (ms)</text>\n"
                  "<text x=\"14\" y=\"%g\" font-size=\"11\" transform=\"rotate(-90 14 %g)\" "
                  "text-anchor=\"middle\">MPJPE (mm)</text>\n"
                  "<text x=\"%g\" y=\"%g\" font-size=\"10\" text-anchor=\"end\">%s</text>\n",
                  (W + left) / 2, H - 6, H / 2, H / 2, left - 4, top + 4, detail::fixed1(ymax).c_str());
    out += buf;
    out += "</svg>\n";
    return out;
}

} // namespace aps
