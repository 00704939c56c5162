#include <catch_amalgamated.hpp>

#include "fixtures.hpp"
#include "support.hpp"

#include <aps/eval.hpp>

using namespace aps;

namespace {

Pose random_pose(std::size_t J, CounterRng& rng)
{
    Pose p(J);
    for (std::size_t j = 0; j < J; ++j)
        p[j] = {rng.uniform(-500.0, 500.0), rng.uniform(-500.0, 500.0), rng.uniform(-500.0, 500.0)};
    return p;
}

Pose shifted(Pose p, Vec3 d)
{
    for (std::size_t j = 0; j < p.size(); ++j)
        p[j] = p[j] + d;
    return p;
}

// Last-frame error at frame f of every window, computed coordinate by coordinate.
double brute_last_frame(const WindowedDataset& ds, std::size_t f)
{
    double total = 0.0;
    for (const auto& w : ds.windows) {
        const Pose& last = w.observed.back();
        const Pose& truth = w.future[f - 1];
        const std::size_t r = ds.root_index;
        double s = 0.0;
        for (std::size_t j = 0; j < ds.joints; ++j) {
            double sq = 0.0;
            for (std::size_t a = 0; a < 3; ++a) {
                const double d = (last[j][a] - last[r][a]) - (truth[j][a] - truth[r][a]);
                sq += d * d;
            }
            s += std::sqrt(sq);
        }
        total += s / static_cast<double>(ds.joints);
    }
    return total / static_cast<double>(ds.size());
}

} // namespace

TEST_CASE("mpjpe hand fixtures")
{
    CounterRng rng(1, "eval.fixtures");
    const Pose p = random_pose(6, rng);
    CHECK(mpjpe(p, p, 0) == 0.0);
    CHECK(std::abs(mpjpe(shifted(p, {5, 5, 5}), p, 0)) <= 1e-9);

    const Pose truth(std::vector<Vec3>{{0, 0, 0}, {1, 2, 3}});
    const Pose pred(std::vector<Vec3>{{0, 0, 0}, {4, 6, 3}});
    CHECK(std::abs(mpjpe(pred, truth, 0) - 2.5) <= 1e-9);
    // the same offset on the root moves every aligned joint
    const Pose moved_root(std::vector<Vec3>{{3, 4, 0}, {1, 2, 3}});
    CHECK(std::abs(mpjpe(moved_root, truth, 0) - 2.5) <= 1e-9);
    CHECK(std::abs(mpjpe(moved_root, truth, 1) - 2.5) <= 1e-9);
}

TEST_CASE("mpjpe over frames averages frames and joints")
{
    const std::vector<Pose> truth(2, Pose(std::vector<Vec3>{{0, 0, 0}, {0, 0, 0}, {0, 0, 0}}));
    std::vector<Pose> pred = truth;
    pred[0][1] = {0, 0, 6};
    pred[1][2] = {0, 3, 0};
    CHECK(std::abs(mpjpe(pred, truth, 0) - 9.0 / 6.0) <= 1e-12);
    CHECK(testing::error_of([&] { mpjpe(pred, std::vector<Pose>(1, truth[0]), 0); }) == ErrorCode::ShapeMismatch);
    CHECK(testing::error_of([&] { mpjpe(Pose(3), Pose(4), 0); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("mpjpe properties")
{
    CounterRng rng(2, "eval.props");
    for (int i = 0; i < 2000; ++i) {
        const std::size_t J = 2 + rng.below(20);
        const std::size_t root = rng.below(J);
        const Pose a = random_pose(J, rng), b = random_pose(J, rng);
        const Vec3 d{rng.uniform(-1e3, 1e3), rng.uniform(-1e3, 1e3), rng.uniform(-1e3, 1e3)};
        const double e = mpjpe(a, b, root);
        CHECK(e > 0.0);
        CHECK(e == mpjpe(b, a, root));
        CHECK(std::abs(mpjpe(shifted(a, d), b, root) - e) <= 1e-9 * std::max(1.0, e));
        CHECK(std::abs(mpjpe(a, shifted(b, d), root) - e) <= 1e-9 * std::max(1.0, e));
        CHECK(mpjpe(a, a, root) == 0.0);
    }
}

TEST_CASE("ground-truth predictor scores zero")
{
    const auto ds = fixtures::smoke_dataset();
    const Predictor oracle = [](const MotionWindow& w) { return w.future; };
    const auto r = evaluate(oracle, ds, HorizonSpec{});
    CHECK(r.windows == ds.size());
    CHECK(r.horizons_ms == std::vector<int>{80, 160, 320, 400, 560, 1000});
    for (double v : r.mean_mm)
        CHECK(v == 0.0);
}

TEST_CASE("constant pose is predicted exactly by the last frame")
{
    SynthOptions o;
    o.kind = SynthKind::Constant;
    o.joints = 7;
    o.frames = 50;
    const auto ds = make_windows({synth_generate(o)}, 10, 25, 3);
    for (double v : evaluate(last_frame_predictor(25), ds, HorizonSpec{}).mean_mm)
        CHECK(v == 0.0);
}

TEST_CASE("last-frame baseline matches a plain-loop evaluation")
{
    const auto ds = fixtures::smoke_dataset();
    const HorizonSpec h;
    const auto r = evaluate(last_frame_predictor(25), ds, h);
    for (std::size_t i = 0; i < h.milliseconds.size(); ++i) {
        const std::size_t f = horizon_to_frame(h.milliseconds[i], 25.0);
        CHECK(std::abs(r.mean_mm[i] - brute_last_frame(ds, f)) <= 1e-9);
    }
    CHECK(r.mean_mm.front() < r.mean_mm.back());
}

TEST_CASE("each horizon depends only on its own frame")
{
    const auto ds = fixtures::smoke_dataset();
    const HorizonSpec h;
    const auto base = evaluate(last_frame_predictor(25), ds, h);
    std::vector<std::size_t> frames;
    for (int ms : h.milliseconds)
        frames.push_back(horizon_to_frame(ms, 25.0));
    for (std::size_t target = 0; target < frames.size(); ++target) {
        // corrupt every predicted frame except the one this horizon reads
        const Predictor mutant = [&](const MotionWindow& w) {
            std::vector<Pose> p(25, w.observed.back());
            for (std::size_t f = 0; f < 25; ++f)
                if (f + 1 != frames[target])
                    p[f] = shifted(Pose(w.observed.back().size()), {1e4, -1e4, 7.0});
            for (std::size_t j = 1; j < p[0].size(); j += 2)
                for (std::size_t f = 0; f < 25; ++f)
                    if (f + 1 != frames[target])
                        p[f][j] = {static_cast<double>(f), 3.0 * j, -9.0};
            return p;
        };
        const auto r = evaluate(mutant, ds, h);
        CHECK(r.mean_mm[target] == base.mean_mm[target]);
        for (std::size_t other = 0; other < frames.size(); ++other)
            if (other != target)
                CHECK(r.mean_mm[other] != base.mean_mm[other]);
    }
}

TEST_CASE("windows shorter than the horizon are rejected")
{
    const auto ds = make_windows(fixtures::sinusoids(1, 4, 40), 10, 20, 1);
    CHECK(testing::error_of([&] { evaluate(last_frame_predictor(20), ds, HorizonSpec{}); }) == ErrorCode::WindowTooShort);
    CHECK_NOTHROW(evaluate(last_frame_predictor(20), ds, HorizonSpec({80, 400, 800})));
    const Predictor short_pred = [](const MotionWindow& w) { return std::vector<Pose>(3, w.observed.back()); };
    CHECK(testing::error_of([&] { evaluate(short_pred, ds, HorizonSpec({80, 400})); }) == ErrorCode::WindowTooShort);
    CHECK(testing::error_of([&] { evaluate(last_frame_predictor(20), WindowedDataset{}, HorizonSpec{}); }) ==
          ErrorCode::InvalidArgument);
}

TEST_CASE("per-action breakdown")
{
    auto seqs = fixtures::sinusoids(3, 4, 40);
    seqs[0].action = "walking";
    seqs[1].action = "eating";
    seqs[2].action = "walking";
    const auto ds = make_windows(seqs, 10, 25, 1);
    const HorizonSpec h({80, 1000});
    const auto r = evaluate(last_frame_predictor(25), ds, h);
    REQUIRE(r.per_action.size() == 2);

    auto subset = [&](std::vector<std::size_t> src) {
        WindowedDataset d = ds;
        d.windows.clear();
        for (const auto& w : ds.windows)
            if (std::find(src.begin(), src.end(), w.source) != src.end())
                d.windows.push_back(w);
        return evaluate(last_frame_predictor(25), d, h).mean_mm;
    };
    const auto walking = subset({0, 2}), eating = subset({1});
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(std::abs(r.per_action.at("walking")[i] - walking[i]) <= 1e-9);
        CHECK(std::abs(r.per_action.at("eating")[i] - eating[i]) <= 1e-9);
    }

    const std::string table = report_table(r);
    CHECK(table.find("milliseconds") != std::string::npos);
    CHECK(table.find("walking") != std::string::npos);
    CHECK(table.find("average") != std::string::npos);
    CHECK(table.find(detail::fixed1(r.mean_mm[1])) != std::string::npos);

    const std::string csv = report_csv(r);
    CHECK(csv.rfind("action,80,1000\n", 0) == 0);
    CHECK(csv.find("\naverage," + format_real(r.mean_mm[0]) + "," + format_real(r.mean_mm[1]) + "\n") !=
          std::string::npos);

    const std::string svg = report_svg(r);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("<polyline") != std::string::npos);
}

TEST_CASE("model predictor returns the future length")
{
    auto s = fixtures::tiny_setup();
    const auto& w = s.ds.windows[0];
    const auto p = model_predictor(s.model)(w);
    CHECK(p.size() == s.ds.future);
    CHECK(p[0].size() == 4);
    for (const auto& pose : p)
        for (std::size_t j = 0; j < pose.size(); ++j)
            for (std::size_t a = 0; a < 3; ++a)
                CHECK(std::isfinite(pose[j][a]));
}
