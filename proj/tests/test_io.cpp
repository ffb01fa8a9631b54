#include "uavtpc/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>

#include "doctest.h"
#include "uavtpc/deployment.hpp"
#include "uavtpc/trajectory_init.hpp"

using namespace uavtpc;

namespace {

std::string base_text() {
  return R"(# sample scenario
version = 1
seed = 7
num_links = 1
p_max = 30 dBm
beta0 = -50 dB
bandwidth = 10000000
noise_psd = -160 dBm/Hz
v_level = 20
v_ascend = 5
v_descend = 3
h_min = 100
h_max = 500
d_min = 20
total_time = 600
gt_positions = [100, -50, 0]
uav_initial = [0, 0, 100]
)";
}

std::string replaced(std::string text, const std::string& from,
                     const std::string& to) {
  auto pos = text.find(from);
  REQUIRE(pos != std::string::npos);
  text.replace(pos, from.size(), to);
  return text;
}

std::string parse_error(const std::string& text) {
  try {
    parse_scenario(text);
  } catch (const IoError& e) {
    return e.what();
  }
  return {};
}

void check_identical(const Scenario& a, const Scenario& b) {
  CHECK(a.seed == b.seed);
  CHECK(a.num_links == b.num_links);
  CHECK(a.p_max_w == b.p_max_w);
  CHECK(a.channel.beta0 == b.channel.beta0);
  CHECK(a.channel.bandwidth_hz == b.channel.bandwidth_hz);
  CHECK(a.channel.noise_psd == b.channel.noise_psd);
  CHECK(a.channel.gamma == b.channel.gamma);
  CHECK(a.limits.v_level == b.limits.v_level);
  CHECK(a.limits.v_ascend == b.limits.v_ascend);
  CHECK(a.limits.v_descend == b.limits.v_descend);
  CHECK(a.limits.h_min == b.limits.h_min);
  CHECK(a.limits.h_max == b.limits.h_max);
  CHECK(a.limits.d_min == b.limits.d_min);
  CHECK(a.horizon.total_time_s == b.horizon.total_time_s);
  CHECK(a.horizon.slot_s == b.horizon.slot_s);
  CHECK(a.horizon.num_slots == b.horizon.num_slots);
  CHECK(a.horizon.reduced_slots == b.horizon.reduced_slots);
  CHECK(a.gt_positions == b.gt_positions);
  CHECK(a.uav_initial == b.uav_initial);
}

}  // namespace

TEST_CASE("decibel conversions invert bit-exactly on their range") {
  CHECK(dbm_to_watts(30.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(db_to_linear(-50.0) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(dbm_to_watts(-160.0) == doctest::Approx(1e-19).epsilon(1e-12));

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> db(-200.0, 40.0);
  for (int i = 0; i < 2000; ++i) {
    double d = db(rng);
    double w = dbm_to_watts(d);      // w is in the converter's range
    CHECK(dbm_to_watts(watts_to_dbm(w)) == w);
    double g = db_to_linear(d);
    CHECK(db_to_linear(linear_to_db(g)) == g);
  }
}

TEST_CASE("format_double is shortest round-trip") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> mant(-1.0, 1.0);
  std::uniform_int_distribution<int> expo(-18, 18);
  for (int i = 0; i < 2000; ++i) {
    double v = mant(rng) * std::pow(10.0, expo(rng));
    std::string s = format_double(v);
    double back = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), back);
    REQUIRE(res.ec == std::errc{});
    CHECK(back == v);
  }
}

TEST_CASE("serialize -> parse is the identity on generated scenarios") {
  for (uint64_t seed : {1ull, 42ull, 987654321ull}) {
    Scenario scen = generate_scenario(seed, 4, 1.0);
    Scenario back = parse_scenario(serialize_scenario(scen));
    check_identical(scen, back);
    CHECK(serialize_scenario(back) == serialize_scenario(scen));
  }
  // reduced_slots survives when set
  Scenario scen = generate_scenario(3, 2, 1.0);
  scen.horizon.reduced_slots = 44;
  Scenario back = parse_scenario(serialize_scenario(scen));
  CHECK(back.horizon.reduced_slots == 44);
}

TEST_CASE("parse -> serialize -> parse is the identity on hand-written text") {
  Scenario s1 = parse_scenario(base_text());
  Scenario s2 = parse_scenario(serialize_scenario(s1));
  check_identical(s1, s2);

  CHECK(s1.p_max_w == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s1.channel.beta0 == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(s1.channel.noise_psd == doctest::Approx(1e-19).epsilon(1e-12));
  CHECK(s1.seed == 7);
}

TEST_CASE("horizon is derived when slot data is absent") {
  Scenario scen = parse_scenario(base_text());
  CHECK(scen.horizon.slot_s == max_sampling_interval(scen.limits));
  CHECK(scen.horizon.num_slots % 2 == 0);
  CHECK(scen.horizon.total_time_s ==
        scen.horizon.num_slots * scen.horizon.slot_s);
  CHECK(scen.horizon.slot_s == doctest::Approx(0.4903).epsilon(1e-4));

  // explicit slot data is taken as given
  std::string text = base_text() + "slot_time = 0.5\nnum_slots = 1200\n";
  Scenario given = parse_scenario(text);
  CHECK(given.horizon.slot_s == 0.5);
  CHECK(given.horizon.num_slots == 1200);
}

TEST_CASE("alternative unit spellings are accepted") {
  Scenario w = parse_scenario(replaced(base_text(), "30 dBm", "1 W"));
  CHECK(w.p_max_w == 1.0);
  Scenario mw = parse_scenario(replaced(base_text(), "30 dBm", "1000 mW"));
  CHECK(mw.p_max_w == 1.0);
  Scenario lin = parse_scenario(replaced(base_text(), "-50 dB", "1e-5"));
  CHECK(lin.channel.beta0 == 1e-5);
  Scenario psd =
      parse_scenario(replaced(base_text(), "-160 dBm/Hz", "1e-19 W/Hz"));
  CHECK(psd.channel.noise_psd == 1e-19);
}

TEST_CASE("parser reports precise errors") {
  // missing key
  CHECK(parse_error(replaced(base_text(), "seed = 7\n", ""))
            .find("missing key `seed`") != std::string::npos);
  // unknown key with its line number
  CHECK(parse_error(base_text() + "mystery = 3\n").find("unknown key") !=
        std::string::npos);
  CHECK(parse_error(base_text() + "mystery = 3\n").find("line 18") !=
        std::string::npos);
  // duplicates
  CHECK(parse_error(base_text() + "seed = 8\n").find("duplicate key") !=
        std::string::npos);
  // malformed values
  CHECK(parse_error(replaced(base_text(), "h_min = 100", "h_min = tall"))
            .find("cannot parse number") != std::string::npos);
  CHECK(parse_error(replaced(base_text(), "30 dBm", "30 dBW"))
            .find("unsupported unit") != std::string::npos);
  CHECK(parse_error(replaced(base_text(), "seed = 7", "seed = -7"))
            .find("unsigned") != std::string::npos);
  CHECK(parse_error(replaced(base_text(), "version = 1", "version = 2"))
            .find("unsupported version") != std::string::npos);
  CHECK(parse_error(replaced(base_text(), "total_time = 600", "total_time"))
            .find("key = value") != std::string::npos);
  // arrays
  CHECK(parse_error(replaced(base_text(), "[100, -50, 0]", "100, -50, 0"))
            .find("bracketed") != std::string::npos);
  CHECK(parse_error(replaced(base_text(), "[100, -50, 0]", "[100, , 0]"))
            .find("empty array element") != std::string::npos);
  CHECK(parse_error(replaced(base_text(), "[100, -50, 0]", "[100, -50]"))
            .find("3 * num_links") != std::string::npos);
  // semantically invalid content is still an I/O failure
  CHECK(parse_error(replaced(base_text(), "h_max = 500", "h_max = 50"))
            .find("h_min") != std::string::npos);
  CHECK_THROWS_AS(
      parse_scenario(replaced(base_text(), "h_max = 500", "h_max = 50")),
      IoError);
}

TEST_CASE("save/load round trip through a file") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "uavtpc_io_test";
  fs::create_directories(dir);
  fs::path file = dir / "scen.txt";

  Scenario scen = generate_scenario(21, 3, 1.0);
  save_scenario(scen, file.string());
  Scenario back = load_scenario(file.string());
  check_identical(scen, back);
  fs::remove_all(dir);

  CHECK_THROWS_AS(load_scenario((dir / "missing.txt").string()), IoError);
  CHECK_THROWS_AS(save_scenario(scen, (dir / "sub" / "x.txt").string()),
                  IoError);
}

TEST_CASE("generate_scenario is deterministic and respects the area") {
  Scenario a = generate_scenario(123, 6, 1.0);
  Scenario b = generate_scenario(123, 6, 1.0);
  CHECK(serialize_scenario(a) == serialize_scenario(b));

  Scenario c = generate_scenario(124, 6, 1.0);
  CHECK(a.gt_positions != c.gt_positions);

  for (int k = 0; k < 6; ++k) {
    CHECK(std::abs(a.gt_positions(0, k)) <= 500.0);
    CHECK(std::abs(a.gt_positions(1, k)) <= 500.0);
    CHECK(a.gt_positions(2, k) == 0.0);
    CHECK(a.uav_initial(2, k) == a.limits.h_min);
    CHECK(std::abs(a.uav_initial(0, k)) <= 500.0);
    CHECK(std::abs(a.uav_initial(1, k)) <= 500.0);
  }
  for (int k = 0; k < 6; ++k)
    for (int j = k + 1; j < 6; ++j)
      CHECK((a.uav_initial.col(k) - a.uav_initial.col(j)).norm() >=
            a.limits.d_min);

  CHECK(a.seed == 123);
  CHECK(a.p_max_w == 1.0);
  CHECK_NOTHROW(a.validate());

  // single link sits at the origin
  Scenario one = generate_scenario(9, 1, 1.0);
  CHECK(one.uav_initial.col(0).head<2>().norm() == 0.0);

  // a 10 x 10 launch grid spans 180 m and cannot fit a 50 m side
  CHECK_THROWS_AS(generate_scenario(1, 100, 0.05), InvalidArgumentError);
}

TEST_CASE("generated scenarios feed the solver pipeline") {
  for (uint64_t seed : {2ull, 5ull, 8ull}) {
    GenerateConfig cfg;
    cfg.total_time_s = 150.0;
    Scenario scen = generate_scenario(seed, 2, 0.4, cfg);
    CAPTURE(seed);
    DeploymentSolution hover = solve_deployment(scen);
    int m = estimate_reduced_horizon(scen, hover.positions, 2);
    TrajectorySolution init = build_initial_trajectory(scen, hover, m);
    FeasibilityReport rep = check_feasibility(init, scen);
    CHECK(rep.feasible(scen, 1e-9));
  }
}
