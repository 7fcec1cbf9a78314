#include "pgn/attacks.hpp"

#include <array>
#include <utility>

namespace pgn {

namespace {

constexpr std::array<std::pair<Method, std::string_view>, 8> kMethods{{
    {Method::IFgsm, "ifgsm"},
    {Method::MiFgsm, "mifgsm"},
    {Method::NiFgsm, "nifgsm"},
    {Method::VmiFgsm, "vmi"},
    {Method::EmiFgsm, "emi"},
    {Method::Pgn, "pgn"},
    {Method::RegIFgsm, "reg-ifgsm"},
    {Method::RegMiFgsm, "reg-mifgsm"},
}};

constexpr std::array<std::pair<TransformKind, std::string_view>, 3> kTransforms{{
    {TransformKind::None, "none"},
    {TransformKind::Dim, "dim"},
    {TransformKind::Sim, "sim"},
}};

}  // namespace

std::string_view method_name(Method m) {
  for (const auto& [method, name] : kMethods) {
    if (method == m) return name;
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (const auto& [method, n] : kMethods) {
    if (n == name) return method;
  }
  throw UsageError("unknown attack method '" + std::string(name) + "'");
}

std::string_view transform_name(TransformKind t) {
  for (const auto& [kind, name] : kTransforms) {
    if (kind == t) return name;
  }
  return "unknown";
}

TransformKind parse_transform(std::string_view name) {
  for (const auto& [kind, n] : kTransforms) {
    if (n == name) return kind;
  }
  throw UsageError("unknown input transform '" + std::string(name) + "'");
}

}  // namespace pgn
