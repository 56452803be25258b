// Copyright 2026 The SplitQ Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// On-disk layer state: a directory holding manifest.json plus one SPQT file
// per tensor. Diagonal transforms are stored as a 1 x dim row of scales, dense
// ones as the full P (the inverse is recomputed on load).

#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitq/errors.hpp"
#include "splitq/layer.hpp"
#include "splitq/tensor_io.hpp"

namespace splitq {

inline constexpr int kLayerFormatVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";

namespace detail {

using json = nlohmann::json;

/// Rejects keys outside `allowed` and requires every key in `required`.
inline void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                       std::initializer_list<const char*> required, const std::string& where) {
  if (!obj.is_object()) throw FormatError(where + ": expected an object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed) known = known || item.key() == k;
    if (!known) throw FormatError(where + ": unknown key \"" + item.key() + "\"");
  }
  for (const char* k : required)
    if (!obj.contains(k)) throw FormatError(where + ": missing key \"" + std::string(k) + "\"");
}

template <typename T>
T get_as(const json& obj, const char* key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(where + ": bad value for \"" + std::string(key) + "\"");
  }
}

inline const char* granularity_name(Granularity g) {
  switch (g) {
    case Granularity::PerTensor: return "per_tensor";
    case Granularity::PerChannel: return "per_channel";
    case Granularity::PerToken: return "per_token";
  }
  return "per_tensor";
}

inline Granularity parse_granularity(const std::string& s, const std::string& where) {
  if (s == "per_tensor") return Granularity::PerTensor;
  if (s == "per_channel") return Granularity::PerChannel;
  if (s == "per_token") return Granularity::PerToken;
  throw FormatError(where + ": unknown granularity \"" + s + "\"");
}

}  // namespace detail

inline nlohmann::json spec_to_json(const QuantSpec& s) {
  nlohmann::json j;
  j["bits"] = s.is_full_precision() ? nlohmann::json("inf") : nlohmann::json(s.bits);
  j["symmetric"] = s.symmetric;
  j["granularity"] = detail::granularity_name(s.granularity);
  return j;
}

inline QuantSpec spec_from_json(const nlohmann::json& j, const std::string& where) {
  detail::check_keys(j, {"bits", "symmetric", "granularity"}, {"bits", "symmetric", "granularity"}, where);
  QuantSpec s;
  if (j.at("bits").is_string()) {
    if (j.at("bits").get<std::string>() != "inf") throw FormatError(where + ": bits must be an integer or \"inf\"");
    s.bits = QuantSpec::kFullPrecision;
  } else {
    s.bits = detail::get_as<int>(j, "bits", where);
  }
  s.symmetric = detail::get_as<bool>(j, "symmetric", where);
  s.granularity = detail::parse_granularity(detail::get_as<std::string>(j, "granularity", where), where);
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw FormatError(where + ": " + e.what());
  }
  return s;
}

inline nlohmann::json partition_to_json(const ChannelPartition& p) {
  return {{"dim", p.dim}, {"main", p.main}, {"text", p.text}, {"vision", p.vision}};
}

inline ChannelPartition partition_from_json(const nlohmann::json& j, const std::string& where) {
  detail::check_keys(j, {"dim", "main", "text", "vision"}, {"dim", "main", "text", "vision"}, where);
  ChannelPartition p;
  p.dim = detail::get_as<std::size_t>(j, "dim", where);
  p.main = detail::get_as<std::vector<std::size_t>>(j, "main", where);
  p.text = detail::get_as<std::vector<std::size_t>>(j, "text", where);
  p.vision = detail::get_as<std::vector<std::size_t>>(j, "vision", where);
  try {
    p.validate();
  } catch (const DimensionError& e) {
    throw FormatError(where + ": " + e.what());
  }
  return p;
}

namespace detail {

inline Matrix row_of(const std::vector<double>& v) { return Matrix(1, v.size(), v); }

inline std::vector<double> read_row(const Matrix& m, const std::string& what) {
  if (m.rows() != 1) throw FormatError(what + ": expected a single row");
  return {m.values().begin(), m.values().end()};
}

inline json save_transform(const std::filesystem::path& dir, const std::string& name, const Transform& t) {
  const std::string file = name + ".spqt";
  if (t.kind() == Transform::Kind::Dense) {
    save_tensor(dir / file, t.matrix());
    return {{"kind", "dense"}, {"file", file}};
  }
  save_tensor(dir / file, row_of(t.scales()));
  return {{"kind", "diagonal"}, {"file", file}};
}

inline Transform load_transform(const std::filesystem::path& dir, const json& j, const std::string& where) {
  check_keys(j, {"kind", "file"}, {"kind", "file"}, where);
  const auto kind = get_as<std::string>(j, "kind", where);
  const Matrix m = load_matrix(dir / get_as<std::string>(j, "file", where));
  try {
    if (kind == "dense") return Transform::dense(m);
    if (kind == "diagonal") return Transform::diagonal(read_row(m, where));
  } catch (const ConfigError& e) {
    throw FormatError(where + ": " + e.what());
  } catch (const DimensionError& e) {
    throw FormatError(where + ": " + e.what());
  }
  throw FormatError(where + ": unknown transform kind \"" + kind + "\"");
}

inline json save_branch(const std::filesystem::path& dir, const std::string& name,
                        const std::optional<LowRankBranch>& b) {
  if (!b) return nullptr;
  json j;
  auto put = [&](const char* part, const Matrix& m) {
    const std::string file = name + "_" + part + ".spqt";
    save_tensor(dir / file, m);
    j[part] = file;
  };
  put("u_basis", b->u_basis);
  put("u_star", b->u_star);
  put("v_base", b->v_base);
  put("gate", row_of(b->gate));
  return j;
}

inline std::optional<LowRankBranch> load_branch(const std::filesystem::path& dir, const json& j,
                                                const std::string& where) {
  if (j.is_null()) return std::nullopt;
  check_keys(j, {"u_basis", "u_star", "v_base", "gate"}, {"u_basis", "u_star", "v_base", "gate"}, where);
  auto get = [&](const char* part) { return load_matrix(dir / get_as<std::string>(j, part, where)); };
  LowRankBranch b;
  b.u_basis = get("u_basis");
  b.u_star = get("u_star");
  b.v_base = get("v_base");
  b.gate = read_row(get("gate"), where + ".gate");
  return b;
}

}  // namespace detail

/// Writes `layer` into `dir` (created if missing). Existing files with the
/// same names are overwritten.
inline void save_layer(const std::filesystem::path& dir, const SplitQLayer& layer) {
  layer.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["format"] = "splitq-layer";
  m["version"] = kLayerFormatVersion;
  m["partition"] = partition_to_json(layer.partition);
  m["act_spec"] = spec_to_json(layer.act_spec);
  m["weight_spec"] = spec_to_json(layer.weight_spec);
  m["aux_bits_floor"] = layer.aux_bits_floor;
  m["cws"] = layer.cws;
  m["mac"] = layer.mac;
  m["d_out"] = layer.d_out();

  nlohmann::json weights;
  for (auto [name, w] : {std::pair{"w_main", &layer.w_main}, std::pair{"w_text", &layer.w_text},
                         std::pair{"w_vision", &layer.w_vision}}) {
    const std::string file = std::string(name) + ".spqt";
    save_tensor(dir / file, *w);
    weights[name] = file;
  }
  m["weights"] = weights;
  m["transforms"] = {{"p_main", detail::save_transform(dir, "p_main", layer.p_main)},
                     {"p_text", detail::save_transform(dir, "p_text", layer.p_text)},
                     {"p_vision", detail::save_transform(dir, "p_vision", layer.p_vision)}};
  m["branches"] = {{"smooth", detail::save_branch(dir, "branch_smooth", layer.branch_smooth)},
                   {"comp", detail::save_branch(dir, "branch_comp", layer.branch_comp)}};

  std::ofstream out(dir / kManifestName, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + (dir / kManifestName).string());
  out << m.dump(2) << '\n';
}

inline SplitQLayer load_layer(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const std::string where = path.string();
  detail::check_keys(m,
                     {"format", "version", "partition", "act_spec", "weight_spec", "aux_bits_floor", "cws",
                      "mac", "d_out", "weights", "transforms", "branches"},
                     {"format", "version", "partition", "act_spec", "weight_spec", "aux_bits_floor", "cws",
                      "mac", "d_out", "weights", "transforms", "branches"},
                     where);
  if (detail::get_as<std::string>(m, "format", where) != "splitq-layer")
    throw FormatError(where + ": not a layer manifest");
  if (detail::get_as<int>(m, "version", where) != kLayerFormatVersion)
    throw FormatError(where + ": unsupported manifest version");

  SplitQLayer layer;
  layer.partition = partition_from_json(m.at("partition"), where + ".partition");
  layer.act_spec = spec_from_json(m.at("act_spec"), where + ".act_spec");
  layer.weight_spec = spec_from_json(m.at("weight_spec"), where + ".weight_spec");
  layer.aux_bits_floor = detail::get_as<int>(m, "aux_bits_floor", where);
  layer.cws = detail::get_as<bool>(m, "cws", where);
  layer.mac = detail::get_as<bool>(m, "mac", where);

  const auto& w = m.at("weights");
  detail::check_keys(w, {"w_main", "w_text", "w_vision"}, {"w_main", "w_text", "w_vision"}, where + ".weights");
  layer.w_main = load_matrix(dir / detail::get_as<std::string>(w, "w_main", where));
  layer.w_text = load_matrix(dir / detail::get_as<std::string>(w, "w_text", where));
  layer.w_vision = load_matrix(dir / detail::get_as<std::string>(w, "w_vision", where));

  const auto& t = m.at("transforms");
  detail::check_keys(t, {"p_main", "p_text", "p_vision"}, {"p_main", "p_text", "p_vision"}, where + ".transforms");
  layer.p_main = detail::load_transform(dir, t.at("p_main"), where + ".p_main");
  layer.p_text = detail::load_transform(dir, t.at("p_text"), where + ".p_text");
  layer.p_vision = detail::load_transform(dir, t.at("p_vision"), where + ".p_vision");

  const auto& b = m.at("branches");
  detail::check_keys(b, {"smooth", "comp"}, {"smooth", "comp"}, where + ".branches");
  layer.branch_smooth = detail::load_branch(dir, b.at("smooth"), where + ".smooth");
  layer.branch_comp = detail::load_branch(dir, b.at("comp"), where + ".comp");

  if (detail::get_as<std::size_t>(m, "d_out", where) != layer.d_out())
    throw FormatError(where + ": d_out disagrees with the stored weights");
  try {
    layer.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(where + ": " + e.what());
  }
  return layer;
}

}  // namespace splitq
