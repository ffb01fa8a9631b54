#pragma once

// Scenario text files and seeded random instance generation.
//
// File format: UTF-8, line oriented. `#` starts a comment, blank lines are
// skipped, everything else is `key = value`. Arrays are bracketed comma
// lists on a single line. Lengths, times and frequencies are SI (m, s, Hz);
// transmit power carries a `dBm` suffix, the reference channel gain `dB`,
// the noise density `dBm/Hz`. Plain watts (`W`, `mW`) are accepted on input.
//
// Doubles are printed in shortest round-trip form and the dB writers search
// for a decibel value whose parse is bit-exact, so parse -> serialize ->
// parse is the identity.

#include <cstdint>
#include <string>

#include "uavtpc/scenario.hpp"

namespace uavtpc {

// 10^(db/10) and its inverse. The inverse prefers (when one exists) a value
// whose forward conversion reproduces `v` bit-exactly.
double db_to_linear(double db);
double linear_to_db(double v);
double dbm_to_watts(double dbm);
double watts_to_dbm(double w);

// Shortest decimal that parses back to exactly `v`.
std::string format_double(double v);

std::string serialize_scenario(const Scenario& scen);

// Throws IoError on malformed or semantically invalid content; messages
// carry 1-based line numbers where available.
Scenario parse_scenario(const std::string& text);

Scenario load_scenario(const std::string& path);
void save_scenario(const Scenario& scen, const std::string& path);

struct GenerateConfig {
  double p_max_w = 1.0;  // 30 dBm
  double total_time_s = 600.0;
  ChannelParams channel;  // beta0 -50 dB, B 10 MHz, N0 -160 dBm/Hz
  KinematicLimits limits;
};

// Random instance: ground terminals uniform in the side x side square
// centred on the origin at z = 0, launch states clustered near the origin
// on a d_min grid at altitude h_min. Deterministic in `seed`. Throws
// InvalidArgument when the launch grid does not fit into the area.
Scenario generate_scenario(uint64_t seed, int num_links, double area_km,
                           const GenerateConfig& cfg = {});

}  // namespace uavtpc
