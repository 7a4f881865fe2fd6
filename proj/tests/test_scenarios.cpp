#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "absorb/scenarios.hpp"

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

using namespace absorb;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string & name) {
    const fs::path p = fs::temp_directory_path() / ("absorb_test_scn_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path & p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("every shipped scenario round-trips through json") {
    CHECK(scenario_names().size() == 8);
    for (const auto & name : scenario_names()) {
        const ExperimentConfig c = make_scenario(name, 3);
        CHECK_NOTHROW(c.validate());
        CHECK(c.train.seed == 3);
        CHECK(c.eval_seed == 103);
        ExperimentConfig back;
        from_json(json(c), back);
        CHECK(json(back) == json(c));
    }
    CHECK_THROWS_AS(make_scenario("toy-nothing"), UsageError);
}

TEST_CASE("persisted configs overlay the named scenario") {
    const fs::path dir = scratch("overlay");
    fs::create_directories(dir);
    write_json(dir / "c.json", wrap("experiment_config", {{"scenario", "toy-hierarchical"}, {"eval_samples", 1234}}));
    const ExperimentConfig c = load_experiment(dir / "c.json");
    CHECK(c.eval_samples == 1234);
    CHECK(c.spec == make_scenario("toy-hierarchical").spec);
}

TEST_CASE("sweep validation") {
    SweepSpec s{make_scenario("toy-independent"), SweepAxis::k, {1, 2}};
    CHECK_THROWS_AS(s.validate(), UsageError);
    s.axis = SweepAxis::l1_coeff;
    s.values = {};
    CHECK_THROWS_AS(s.validate(), UsageError);
    s.values = {-1.0};
    CHECK_THROWS_AS(s.validate(), UsageError);
    s.values = {0.01};
    CHECK_NOTHROW(s.validate());
    s.axis = SweepAxis::width;
    s.values = {2.5};
    CHECK_THROWS_AS(s.validate(), UsageError);
    CHECK_THROWS_AS(parse_axis("depth"), UsageError);
    CHECK(parse_axis(axis_name(SweepAxis::delta)) == SweepAxis::delta);
}

TEST_CASE("delta sweep on the absorption world flips at full absorption") {
    SweepSpec s{make_scenario("absorption-world"), SweepAxis::delta, {0.0, 0.5, 1.0}};
    s.base.eval_samples = 40'000;
    const fs::path dir = scratch("delta");
    const auto pts = run_sweep(s, dir);
    REQUIRE(pts.size() == 3);
    for (const auto & p : pts) CHECK_FALSE(p.error.has_value());
    CHECK(pts[0].absorption_count == 0);
    CHECK(pts[1].absorption_count == 0);
    CHECK(pts[2].absorption_count > 0);
    CHECK(fs::exists(dir / "sweep.csv"));
    CHECK(fs::exists(dir / "point_2.json"));
}

TEST_CASE("stronger L1 gives sparser latents") {
    SweepSpec s{make_scenario("toy-independent"), SweepAxis::l1_coeff, {0.0, 0.03, 0.3}};
    s.base.train.total_samples = 300'000;
    s.base.eval_samples = 5000;
    const auto pts = run_sweep(s, scratch("l1"));
    for (std::size_t i = 1; i < pts.size(); ++i) CHECK(pts[i].l0 <= pts[i - 1].l0);
}

TEST_CASE("width sweep records splitting") {
    SweepSpec s{make_scenario("toy-splitting"), SweepAxis::width, {4, 8, 16}};
    s.base.train.total_samples = 200'000;
    s.base.eval_samples = 5000;
    const auto pts = run_sweep(s, scratch("width"));
    for (const auto & p : pts) {
        CHECK_FALSE(p.error.has_value());
        CHECK(p.split_total >= 3);
    }
}

TEST_CASE("a failing point keeps the rest of the sweep") {
    SweepSpec s{make_scenario("toy-independent"), SweepAxis::l1_coeff, {1e-3, std::numeric_limits<double>::infinity()}};
    s.base.train.total_samples = 50'000;
    s.base.eval_samples = 2000;
    const fs::path dir = scratch("fail");
    const auto pts = run_sweep(s, dir);
    CHECK_FALSE(pts[0].error.has_value());
    CHECK(pts[1].error.has_value());
    const std::string csv = slurp(dir / "sweep.csv");
    std::size_t lines = 0;
    for (char ch : csv) lines += ch == '\n';
    CHECK(lines == 3);
}

TEST_CASE("scenario runs are byte-for-byte reproducible") {
    ExperimentConfig c = make_scenario("toy-hierarchical", 5);
    c.train.total_samples = 200'000;
    c.eval_samples = 5000;
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    const ScenarioResult ra = run_scenario(c, a);
    run_scenario(c, b);
    CHECK(fs::exists(a / "report.json"));
    std::size_t compared = 0;
    for (const auto & e : fs::directory_iterator(a)) {
        CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
        ++compared;
    }
    CHECK(compared >= 10);
    CHECK_FALSE(ra.assertions.empty());
}

TEST_CASE("theory scenario passes") {
    const ScenarioResult r = run_scenario(make_scenario("theory-verify"), scratch("theory"));
    CHECK(r.pass());
}
