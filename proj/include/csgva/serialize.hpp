#pragma once

// JSON form of lambda. Doubles are written in shortest round-trip form, so
// reading back reproduces every bit.

#include "csgva/family.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace csgva {

namespace detail {

inline nlohmann::json to_array(const Vector& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline nlohmann::json to_rowmajor(const Matrix& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  }
  return nlohmann::json(std::move(out));
}

inline Vector read_array(const nlohmann::json& j, const char* key, Index expected) {
  if (!j.contains(key) || !j.at(key).is_array()) {
    throw InvalidArgument(std::string("lambda json: missing array '") + key + "'");
  }
  const auto& arr = j.at(key);
  if (static_cast<Index>(arr.size()) != expected) {
    throw InvalidArgument(std::string("lambda json: '") + key + "' has " +
                          std::to_string(arr.size()) + " entries, expected " +
                          std::to_string(expected));
  }
  Vector out(expected);
  for (Index i = 0; i < expected; ++i) {
    const auto& x = arr[static_cast<std::size_t>(i)];
    if (!x.is_number()) throw InvalidArgument(std::string("lambda json: non-numeric entry in '") + key + "'");
    out[i] = x.get<double>();
  }
  return out;
}

inline Matrix read_rowmajor(const nlohmann::json& j, const char* key, Index rows, Index cols) {
  const Vector flat = read_array(j, key, rows * cols);
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index c = 0; c < cols; ++c) out(i, c) = flat[i * cols + c];
  }
  return out;
}

}  // namespace detail

inline nlohmann::json to_json(const VariationalParams& p) {
  const ModelDims dims = p.dims();
  nlohmann::json j;
  j["pattern"] = {{"G", dims.G}, {"n", dims.n}, {"L", dims.L}, {"ell", dims.ell}};
  j["gaussian_mode"] = p.gaussian_mode;
  j["mu1"] = detail::to_array(p.mu1);
  j["c1star_vech"] = detail::to_array(p.c1star);
  j["d"] = detail::to_array(p.d);
  j["D_rowmajor"] = detail::to_rowmajor(p.D);
  j["f_pattern"] = detail::to_array(p.f);
  j["F_rowmajor"] = detail::to_rowmajor(p.F);
  return j;
}

inline VariationalParams lambda_from_json(const nlohmann::json& j) {
  if (!j.contains("pattern")) throw InvalidArgument("lambda json: missing 'pattern'");
  const auto& pat = j.at("pattern");
  ModelDims dims;
  try {
    dims = {pat.at("G").get<Index>(), pat.at("n").get<Index>(), pat.at("L").get<Index>(),
            pat.at("ell").get<Index>()};
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("lambda json: bad pattern descriptor: ") + e.what());
  }
  if (dims.G < 1) throw InvalidArgument("lambda json: G must be positive");
  VariationalParams p = VariationalParams::zeros(dims, j.value("gaussian_mode", false));
  const Index P = p.local_pattern->size();
  p.mu1 = detail::read_array(j, "mu1", dims.G);
  p.c1star = detail::read_array(j, "c1star_vech", p.global_pattern->size());
  p.d = detail::read_array(j, "d", dims.local_dim());
  p.D = detail::read_rowmajor(j, "D_rowmajor", dims.local_dim(), dims.G);
  p.f = detail::read_array(j, "f_pattern", P);
  p.F = detail::read_rowmajor(j, "F_rowmajor", P, dims.G);
  return p;
}

}  // namespace csgva
