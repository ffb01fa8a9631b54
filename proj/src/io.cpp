#include "uavtpc/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string_view>

namespace uavtpc {

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
double dbm_to_watts(double dbm) { return 1e-3 * db_to_linear(dbm); }

namespace {

// Preimage search around the float guess: the forward conversion of the
// returned value reproduces `target` bit-exactly whenever some double does
// (the guess is within a couple of ulps of any exact preimage).
template <class Fwd>
double invert(double target, double guess, Fwd fwd) {
  double best = guess;
  double best_err = std::abs(fwd(guess) - target);
  double lo = guess, hi = guess;
  for (int i = 0; i < 8 && best_err > 0; ++i) {
    lo = std::nextafter(lo, -std::numeric_limits<double>::infinity());
    hi = std::nextafter(hi, std::numeric_limits<double>::infinity());
    for (double cand : {lo, hi}) {
      double err = std::abs(fwd(cand) - target);
      if (err < best_err) {
        best_err = err;
        best = cand;
      }
    }
  }
  return best;
}

}  // namespace

double linear_to_db(double v) {
  return invert(v, 10.0 * std::log10(v), &db_to_linear);
}

double watts_to_dbm(double w) {
  return invert(w, 10.0 * std::log10(w) + 30.0, &dbm_to_watts);
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

constexpr auto npos = std::string_view::npos;

std::string_view trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(int line, const std::string& msg) {
  throw IoError("scenario file, line " + std::to_string(line) + ": " + msg);
}

struct Entry {
  std::string value;
  int line = 0;
  bool used = false;
};

using Table = std::map<std::string, Entry>;

Table tokenize(const std::string& text) {
  Table tab;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    auto sv = trim(line);
    if (sv.empty()) continue;
    auto eq = sv.find('=');
    if (eq == npos) fail(line_no, "expected `key = value`");
    std::string key(trim(sv.substr(0, eq)));
    std::string value(trim(sv.substr(eq + 1)));
    if (key.empty()) fail(line_no, "empty key");
    if (value.empty()) fail(line_no, "empty value for `" + key + "`");
    auto [it, fresh] = tab.emplace(std::move(key), Entry{value, line_no});
    if (!fresh) fail(line_no, "duplicate key `" + it->first + "`");
  }
  return tab;
}

double number_token(std::string_view tok, int line) {
  double v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    fail(line, "cannot parse number `" + std::string(tok) + "`");
  return v;
}

// Typed access to the key/value table; every getter marks its key used so
// finish() can flag typos.
class Fields {
 public:
  explicit Fields(Table& tab) : tab_(tab) {}

  bool has(const std::string& key) const { return tab_.count(key) > 0; }

  double number(const std::string& key) {
    const Entry& e = get(key);
    return number_token(e.value, e.line);
  }

  // Number plus optional unit suffix; `convert` maps (value, unit) and
  // returns false on an unknown unit.
  template <class Convert>
  double quantity(const std::string& key, Convert convert) {
    const Entry& e = get(key);
    std::string_view v = e.value;
    double num = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), num);
    if (res.ec != std::errc{})
      fail(e.line, "cannot parse number in `" + e.value + "`");
    std::string unit(trim(v.substr(res.ptr - v.data())));
    double out = 0;
    if (!convert(num, unit, out))
      fail(e.line, "unsupported unit `" + unit + "` for `" + key + "`");
    return out;
  }

  long integer(const std::string& key) {
    const Entry& e = get(key);
    long v = 0;
    auto res =
        std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
    if (res.ec != std::errc{} ||
        res.ptr != e.value.data() + e.value.size())
      fail(e.line, "cannot parse integer `" + e.value + "`");
    return v;
  }

  uint64_t unsigned64(const std::string& key) {
    const Entry& e = get(key);
    uint64_t v = 0;
    auto res =
        std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
    if (res.ec != std::errc{} ||
        res.ptr != e.value.data() + e.value.size())
      fail(e.line, "`" + key + "` must be an unsigned integer");
    return v;
  }

  std::vector<double> array(const std::string& key, int* line = nullptr) {
    const Entry& e = get(key);
    if (line) *line = e.line;
    std::string_view v = e.value;
    if (v.size() < 2 || v.front() != '[' || v.back() != ']')
      fail(e.line, "`" + key + "` must be a bracketed array");
    v = v.substr(1, v.size() - 2);
    std::vector<double> out;
    if (trim(v).empty()) return out;
    while (true) {
      auto comma = v.find(',');
      std::string_view tok = trim(v.substr(0, comma));
      if (tok.empty()) fail(e.line, "empty array element");
      out.push_back(number_token(tok, e.line));
      if (comma == npos) break;
      v = v.substr(comma + 1);
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, entry] : tab_)
      if (!entry.used) fail(entry.line, "unknown key `" + key + "`");
  }

 private:
  const Entry& get(const std::string& key) {
    auto it = tab_.find(key);
    if (it == tab_.end())
      throw IoError("scenario file: missing key `" + key + "`");
    it->second.used = true;
    return it->second;
  }

  Table& tab_;
};

bool power_unit(double v, const std::string& unit, double& out) {
  if (unit == "dBm") out = dbm_to_watts(v);
  else if (unit == "mW") out = 1e-3 * v;
  else if (unit == "W" || unit.empty()) out = v;
  else return false;
  return true;
}

bool gain_unit(double v, const std::string& unit, double& out) {
  if (unit == "dB") out = db_to_linear(v);
  else if (unit.empty()) out = v;
  else return false;
  return true;
}

bool psd_unit(double v, const std::string& unit, double& out) {
  if (unit == "dBm/Hz") out = dbm_to_watts(v);
  else if (unit == "W/Hz" || unit.empty()) out = v;
  else return false;
  return true;
}

std::string format_array(const double* data, int n) {
  std::string out = "[";
  for (int i = 0; i < n; ++i) {
    if (i) out += ", ";
    out += format_double(data[i]);
  }
  out += "]";
  return out;
}

}  // namespace

std::string serialize_scenario(const Scenario& scen) {
  std::string out = "# uavtpc scenario\n";
  auto put = [&](const std::string& key, const std::string& value) {
    out += key;
    out += " = ";
    out += value;
    out += "\n";
  };
  put("version", "1");
  put("seed", std::to_string(scen.seed));
  put("num_links", std::to_string(scen.num_links));
  put("p_max", format_double(watts_to_dbm(scen.p_max_w)) + " dBm");
  put("beta0", format_double(linear_to_db(scen.channel.beta0)) + " dB");
  put("bandwidth", format_double(scen.channel.bandwidth_hz));
  put("noise_psd", format_double(watts_to_dbm(scen.channel.noise_psd)) +
                       " dBm/Hz");
  put("v_level", format_double(scen.limits.v_level));
  put("v_ascend", format_double(scen.limits.v_ascend));
  put("v_descend", format_double(scen.limits.v_descend));
  put("h_min", format_double(scen.limits.h_min));
  put("h_max", format_double(scen.limits.h_max));
  put("d_min", format_double(scen.limits.d_min));
  put("total_time", format_double(scen.horizon.total_time_s));
  put("slot_time", format_double(scen.horizon.slot_s));
  put("num_slots", std::to_string(scen.horizon.num_slots));
  if (scen.horizon.reduced_slots)
    put("reduced_slots", std::to_string(*scen.horizon.reduced_slots));
  put("gt_positions",
      format_array(scen.gt_positions.data(), 3 * scen.num_links));
  put("uav_initial", format_array(scen.uav_initial.data(), 3 * scen.num_links));
  return out;
}

Scenario parse_scenario(const std::string& text) {
  Table tab = tokenize(text);
  Fields f(tab);

  if (f.integer("version") != 1)
    throw IoError("scenario file: unsupported version (expected 1)");

  Scenario scen;
  scen.seed = f.unsigned64("seed");
  scen.num_links = static_cast<int>(f.integer("num_links"));
  scen.p_max_w = f.quantity("p_max", power_unit);

  double beta0 = f.quantity("beta0", gain_unit);
  double bandwidth = f.number("bandwidth");
  double noise = f.quantity("noise_psd", psd_unit);
  scen.channel = ChannelParams::make(beta0, bandwidth, noise);

  scen.limits.v_level = f.number("v_level");
  scen.limits.v_ascend = f.number("v_ascend");
  scen.limits.v_descend = f.number("v_descend");
  scen.limits.h_min = f.number("h_min");
  scen.limits.h_max = f.number("h_max");
  scen.limits.d_min = f.number("d_min");

  scen.horizon.total_time_s = f.number("total_time");
  const bool have_ts = f.has("slot_time");
  const bool have_n = f.has("num_slots");
  if (have_ts) scen.horizon.slot_s = f.number("slot_time");
  if (have_n) scen.horizon.num_slots = static_cast<int>(f.integer("num_slots"));
  if (f.has("reduced_slots"))
    scen.horizon.reduced_slots = static_cast<int>(f.integer("reduced_slots"));

  int gt_line = 0, uav_line = 0;
  std::vector<double> gts = f.array("gt_positions", &gt_line);
  std::vector<double> uavs = f.array("uav_initial", &uav_line);
  f.finish();

  const int want = 3 * std::max(scen.num_links, 0);
  if (static_cast<int>(gts.size()) != want)
    fail(gt_line, "gt_positions needs 3 * num_links values");
  if (static_cast<int>(uavs.size()) != want)
    fail(uav_line, "uav_initial needs 3 * num_links values");
  scen.gt_positions =
      Eigen::Map<const Matrix3Xd>(gts.data(), 3, scen.num_links);
  scen.uav_initial =
      Eigen::Map<const Matrix3Xd>(uavs.data(), 3, scen.num_links);

  try {
    if (!have_ts || !have_n) scen.horizon.finalize(scen.limits);
    scen.validate();
  } catch (const Error& e) {
    throw IoError(std::string("scenario file: ") + e.what());
  }
  return scen;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open `" + path + "` for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failure on `" + path + "`");
  return parse_scenario(ss.str());
}

void save_scenario(const Scenario& scen, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open `" + path + "` for writing");
  out << serialize_scenario(scen);
  out.flush();
  if (!out) throw IoError("write failure on `" + path + "`");
}

Scenario generate_scenario(uint64_t seed, int num_links, double area_km,
                           const GenerateConfig& cfg) {
  if (num_links < 1)
    throw InvalidArgumentError("generate_scenario: need at least one link");
  if (!(area_km > 0))
    throw InvalidArgumentError("generate_scenario: area side must be positive");
  if (!(cfg.p_max_w > 0) || !(cfg.total_time_s > 0))
    throw InvalidArgumentError(
        "generate_scenario: p_max and total_time must be positive");
  cfg.limits.validate();
  cfg.channel.validate();

  const double side = 1000.0 * area_km;
  // A hair above d_min so the launch states are strictly separated; interior
  // initializers need strict clearance while UAVs queue near their parks.
  const double spacing = cfg.limits.d_min * (1 + 1e-6);
  const int cols = static_cast<int>(std::ceil(std::sqrt(double(num_links))));
  const int rows = (num_links + cols - 1) / cols;
  const double extent = std::max(cols - 1, rows - 1) * spacing;
  if (extent > side)
    throw InvalidArgumentError(
        "generate_scenario: launch grid spans " + format_double(extent) +
        " m, larger than the " + format_double(side) + " m area side");

  std::mt19937_64 rng(seed);
  auto uniform = [&] { return (rng() >> 11) * 0x1.0p-53; };

  Scenario scen;
  scen.seed = seed;
  scen.num_links = num_links;
  scen.p_max_w = cfg.p_max_w;
  // Recompute gamma so a serialize/parse round trip is bit-identical.
  scen.channel = ChannelParams::make(cfg.channel.beta0,
                                     cfg.channel.bandwidth_hz,
                                     cfg.channel.noise_psd);
  scen.limits = cfg.limits;

  scen.gt_positions.resize(3, num_links);
  for (int k = 0; k < num_links; ++k) {
    scen.gt_positions(0, k) = (uniform() - 0.5) * side;
    scen.gt_positions(1, k) = (uniform() - 0.5) * side;
    scen.gt_positions(2, k) = 0.0;
  }

  scen.uav_initial.resize(3, num_links);
  for (int k = 0; k < num_links; ++k) {
    const int i = k / cols, j = k % cols;
    scen.uav_initial(0, k) = (j - 0.5 * (cols - 1)) * spacing;
    scen.uav_initial(1, k) = (i - 0.5 * (rows - 1)) * spacing;
    scen.uav_initial(2, k) = cfg.limits.h_min;
  }

  scen.horizon.total_time_s = cfg.total_time_s;
  scen.horizon.finalize(scen.limits);
  scen.validate();
  return scen;
}

}  // namespace uavtpc
