#pragma once
// SimRecord binary files, CSV exports and the config document shared by the
// command-line subcommands.
//
// Binary layout, little-endian:
//   "RCSR" | u16 version | u32 header length | header JSON
//   | bits: per channel ceil(n_cycles/8) bytes, LSB first, +1 -> 1
//   | u8 has_states | f64 state samples, cycle-major (when has_states)

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rcchain/chain_model.hpp"
#include "rcchain/error.hpp"
#include "rcchain/sim_engine.hpp"

namespace rcchain {

inline constexpr char kRecordMagic[4] = {'R', 'C', 'S', 'R'};
inline constexpr std::uint16_t kRecordVersion = 1;

namespace detail {

template <class T>
void put_le(std::ostream& os, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  os.write(buf, sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw FormatError("SimRecord: truncated file");
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::make_unsigned_t<T>>(buf[i]) << (8 * i);
  return static_cast<T>(u);
}

inline nlohmann::json record_header(const SimRecord& rec) {
  return {{"config", rec.config},
          {"seed", rec.seed},
          {"substeps", rec.substeps_per_cycle},
          {"delay_substeps", rec.delay_substeps},
          {"n_stages", rec.n_stages},
          {"n_cycles", rec.n_cycles},
          {"warmup_cycles", rec.warmup_cycles},
          {"max_abs_state", rec.max_abs_state}};
}

}  // namespace detail

inline void write_record(std::ostream& os, const SimRecord& rec) {
  os.write(kRecordMagic, 4);
  detail::put_le<std::uint16_t>(os, kRecordVersion);
  const std::string header = detail::record_header(rec).dump();
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));

  const auto bytes_per_channel = static_cast<std::size_t>((rec.n_cycles + 7) / 8);
  std::vector<char> packed(bytes_per_channel);
  for (int l = 0; l < rec.n_stages; ++l) {
    std::fill(packed.begin(), packed.end(), 0);
    for (std::int64_t k = 0; k < rec.n_cycles; ++k)
      if (rec.bit(l, k) > 0) packed[static_cast<std::size_t>(k / 8)] |= static_cast<char>(1u << (k % 8));
    os.write(packed.data(), static_cast<std::streamsize>(packed.size()));
  }
  detail::put_le<std::uint8_t>(os, rec.has_states() ? 1 : 0);
  for (double v : rec.state_samples) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("write_record: stream error");
}

inline SimRecord read_record(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kRecordMagic, 4) != 0)
    throw FormatError("SimRecord: bad magic");
  const auto version = detail::get_le<std::uint16_t>(is);
  if (version != kRecordVersion) throw FormatError("SimRecord: unsupported version " + std::to_string(version));
  const auto header_len = detail::get_le<std::uint32_t>(is);
  std::string header(header_len, '\0');
  if (!is.read(header.data(), header_len)) throw FormatError("SimRecord: truncated header");
  const auto h = nlohmann::json::parse(header);

  SimRecord rec;
  rec.config = h.at("config");
  rec.seed = h.at("seed").get<std::uint64_t>();
  rec.substeps_per_cycle = h.at("substeps").get<int>();
  rec.delay_substeps = h.at("delay_substeps").get<int>();
  rec.n_stages = h.at("n_stages").get<int>();
  rec.n_cycles = h.at("n_cycles").get<std::int64_t>();
  rec.warmup_cycles = h.at("warmup_cycles").get<std::int64_t>();
  rec.max_abs_state = h.at("max_abs_state").get<std::vector<double>>();

  const auto bytes_per_channel = static_cast<std::size_t>((rec.n_cycles + 7) / 8);
  std::vector<unsigned char> packed(bytes_per_channel);
  rec.bits.resize(static_cast<std::size_t>(rec.n_stages * rec.n_cycles));
  for (int l = 0; l < rec.n_stages; ++l) {
    if (!is.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size())))
      throw FormatError("SimRecord: truncated bit payload");
    for (std::int64_t k = 0; k < rec.n_cycles; ++k)
      rec.bits[static_cast<std::size_t>(l * rec.n_cycles + k)] =
          (packed[static_cast<std::size_t>(k / 8)] >> (k % 8)) & 1u ? std::int8_t{1} : std::int8_t{-1};
  }
  if (detail::get_le<std::uint8_t>(is) != 0) {
    rec.state_samples.resize(static_cast<std::size_t>(rec.n_stages * rec.n_cycles));
    for (auto& v : rec.state_samples) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(is));
  }
  return rec;
}

inline void save_record(const std::string& path, const SimRecord& rec) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_record(os, rec);
}

inline SimRecord load_record(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_record(is);
}

/// One row per clock cycle: k, s_1..s_N.
inline void write_bits_csv(std::ostream& os, const SimRecord& rec) {
  os << 'k';
  for (int l = 1; l <= rec.n_stages; ++l) os << ",s" << l;
  os << '\n';
  for (std::int64_t k = 0; k < rec.n_cycles; ++k) {
    os << k;
    for (int l = 0; l < rec.n_stages; ++l) os << ',' << static_cast<int>(rec.bit(l, k));
    os << '\n';
  }
}

/// One row per clock edge: k, v_x1..v_xN.
inline void write_states_csv(std::ostream& os, const SimRecord& rec) {
  if (!rec.has_states()) throw DomainError("write_states_csv: record has no state samples");
  os << 'k';
  for (int l = 1; l <= rec.n_stages; ++l) os << ",v_x" << l;
  os << '\n';
  os.precision(17);
  for (std::int64_t k = 0; k < rec.n_cycles; ++k) {
    os << k;
    for (int l = 0; l < rec.n_stages; ++l) os << ',' << rec.state(k, l);
    os << '\n';
  }
}

/// Config document: {"params": ..., "elements": ...}. A bare ChainParameters
/// object is accepted too; elements then default to nominal with R = r_value.
struct ConfigDocument {
  ChainParameters params;
  ElementValues elements;
};

inline nlohmann::json to_document(const ChainParameters& p, const ElementValues& e) {
  return {{"params", p}, {"elements", e}};
}

inline ConfigDocument parse_document(const nlohmann::json& j, double r_value = 1e4) {
  ConfigDocument d;
  if (j.contains("params")) {
    d.params = j.at("params").get<ChainParameters>();
    d.elements = j.contains("elements") ? j.at("elements").get<ElementValues>()
                                        : nominal_elements(d.params, r_value);
  } else {
    d.params = j.get<ChainParameters>();
    d.elements = nominal_elements(d.params, r_value);
  }
  validate(d.params);
  validate(d.elements);
  if (d.elements.n_stages() != d.params.n_stages)
    throw DomainError("config: elements and params disagree on the number of stages");
  return d;
}

inline ConfigDocument load_document(const std::string& path, double r_value = 1e4) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return parse_document(nlohmann::json::parse(is), r_value);
}

}  // namespace rcchain
