#pragma once

// Declarative key-value arm files.
//
//   type = planar | chain
//   # planar
//   link_lengths = 1 1 1
//   limit.<joint> = <lo> <hi>          (inf / -inf allowed)
//   # chain
//   base_position = x y z
//   base_orientation = w x y z
//   joint.<k>.name / .axis / .offset / .limit / .mirror
//
// Blank lines and '#' comments are ignored. Doubles are written with 17
// significant digits so save -> load is lossless.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "cspace/error.hpp"
#include "cspace/kinematics.hpp"

namespace cspace {

using Arm = std::variant<PlanarArm, ChainArm>;

inline int arm_dof(const Arm& arm) {
  return std::visit([](const auto& a) { return a.dof(); }, arm);
}

inline std::vector<std::string> arm_joint_names(const Arm& arm) {
  if (const auto* p = std::get_if<PlanarArm>(&arm)) return {p->joint_names.begin(), p->joint_names.end()};
  std::vector<std::string> names;
  for (const auto& j : std::get<ChainArm>(arm).joints) names.push_back(j.name);
  return names;
}

namespace detail {

inline std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<double> parse_doubles(const std::string& key, const std::string& value, std::size_t expected) {
  std::istringstream in(value);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw ParseError("arm config: bad number '" + tok + "' for " + key);
    out.push_back(v);
  }
  if (expected && out.size() != expected) {
    throw ParseError("arm config: " + key + " expects " + std::to_string(expected) + " values");
  }
  return out;
}

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("arm config: line " + std::to_string(lineno) + " has no '='");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline const std::string& need(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ParseError("arm config: missing key '" + key + "'");
  return it->second;
}

inline JointLimit parse_limit(const std::string& key, const std::string& value) {
  const auto v = parse_doubles(key, value, 2);
  return {v[0], v[1]};
}

}  // namespace detail

inline Arm parse_arm(std::istream& in) {
  using namespace detail;
  const KeyValues kv = parse_key_values(in);
  const std::string& type = need(kv, "type");
  if (type == "planar") {
    PlanarArm arm;
    const auto l = parse_doubles("link_lengths", need(kv, "link_lengths"), 3);
    for (int i = 0; i < 3; ++i) arm.link_lengths[i] = l[i];
    for (int i = 0; i < 3; ++i) {
      const auto it = kv.find("limit." + arm.joint_names[i]);
      if (it != kv.end()) arm.limits[i] = parse_limit(it->first, it->second);
    }
    arm.validate();
    return arm;
  }
  if (type == "chain") {
    ChainArm arm;
    if (auto it = kv.find("base_position"); it != kv.end()) {
      const auto v = parse_doubles(it->first, it->second, 3);
      arm.base_position = {v[0], v[1], v[2]};
    }
    if (auto it = kv.find("base_orientation"); it != kv.end()) {
      const auto v = parse_doubles(it->first, it->second, 4);
      arm.base_orientation = Eigen::Quaterniond(v[0], v[1], v[2], v[3]);
    }
    for (int k = 0;; ++k) {
      const std::string prefix = "joint." + std::to_string(k) + ".";
      if (!kv.count(prefix + "axis")) break;
      RevoluteJoint j;
      const auto name = kv.find(prefix + "name");
      j.name = name != kv.end() ? name->second : "joint" + std::to_string(k);
      const auto a = parse_doubles(prefix + "axis", need(kv, prefix + "axis"), 3);
      j.axis = {a[0], a[1], a[2]};
      const auto o = parse_doubles(prefix + "offset", need(kv, prefix + "offset"), 3);
      j.offset = {o[0], o[1], o[2]};
      if (auto it = kv.find(prefix + "limit"); it != kv.end()) j.limit = parse_limit(it->first, it->second);
      if (auto it = kv.find(prefix + "mirror"); it != kv.end()) {
        j.mirror_sign = static_cast<int>(parse_doubles(it->first, it->second, 1)[0]);
      }
      arm.joints.push_back(j);
    }
    arm.validate();
    return arm;
  }
  throw ParseError("arm config: unknown type '" + type + "'");
}

inline Arm load_arm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("arm config: cannot open " + path);
  return parse_arm(in);
}

inline std::string format_arm(const Arm& arm) {
  using detail::fmt_double;
  std::ostringstream out;
  if (const auto* p = std::get_if<PlanarArm>(&arm)) {
    out << "type = planar\n";
    out << "link_lengths = " << fmt_double(p->link_lengths[0]) << ' ' << fmt_double(p->link_lengths[1]) << ' '
        << fmt_double(p->link_lengths[2]) << '\n';
    for (int i = 0; i < 3; ++i) {
      out << "limit." << p->joint_names[i] << " = " << fmt_double(p->limits[i].lo) << ' '
          << fmt_double(p->limits[i].hi) << '\n';
    }
    return out.str();
  }
  const auto& c = std::get<ChainArm>(arm);
  out << "type = chain\n";
  out << "base_position = " << fmt_double(c.base_position.x()) << ' ' << fmt_double(c.base_position.y()) << ' '
      << fmt_double(c.base_position.z()) << '\n';
  out << "base_orientation = " << fmt_double(c.base_orientation.w()) << ' ' << fmt_double(c.base_orientation.x())
      << ' ' << fmt_double(c.base_orientation.y()) << ' ' << fmt_double(c.base_orientation.z()) << '\n';
  for (int k = 0; k < c.dof(); ++k) {
    const auto& j = c.joints[k];
    const std::string p = "joint." + std::to_string(k) + ".";
    out << p << "name = " << j.name << '\n';
    out << p << "axis = " << fmt_double(j.axis.x()) << ' ' << fmt_double(j.axis.y()) << ' ' << fmt_double(j.axis.z())
        << '\n';
    out << p << "offset = " << fmt_double(j.offset.x()) << ' ' << fmt_double(j.offset.y()) << ' '
        << fmt_double(j.offset.z()) << '\n';
    out << p << "limit = " << fmt_double(j.limit.lo) << ' ' << fmt_double(j.limit.hi) << '\n';
    out << p << "mirror = " << j.mirror_sign << '\n';
  }
  return out.str();
}

}  // namespace cspace
