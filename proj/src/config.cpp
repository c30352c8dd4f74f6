// Copyright 2026 The patchcast Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchcast/config.hpp"

#include "patchcast/error.hpp"

#include <boost/property_tree/ini_parser.hpp>

#include <charconv>
#include <fstream>
#include <sstream>

namespace patchcast {

namespace pt = boost::property_tree;

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, c.tree_);
  } catch (const pt::ini_parser_error& e) {
    throw DataError(DataErrc::parse_error, std::string("config: ") + e.what());
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataErrc::file_not_found, "config file not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Config::to_text() const {
  std::ostringstream out;
  pt::ini_parser::write_ini(out, tree_);
  return out.str();
}

bool Config::contains(const std::string& key) const { return tree_.get_optional<std::string>(key).has_value(); }

std::optional<std::string> Config::get(const std::string& key) const {
  if (auto v = tree_.get_optional<std::string>(key)) return *v;
  return std::nullopt;
}

void Config::set(const std::string& key, const std::string& value) { tree_.put(key, value); }
void Config::set(const std::string& key, double value) { tree_.put(key, format_double(value)); }
void Config::set(const std::string& key, std::int64_t value) { tree_.put(key, std::to_string(value)); }
void Config::set(const std::string& key, std::uint64_t value) { tree_.put(key, std::to_string(value)); }
void Config::set(const std::string& key, bool value) { tree_.put(key, std::string(value ? "true" : "false")); }

void Config::set(const std::string& key, const std::vector<double>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + format_double(values[i]);
  tree_.put(key, s);
}

void Config::set(const std::string& key, const std::vector<std::int64_t>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + std::to_string(values[i]);
  tree_.put(key, s);
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && (*first == ' ' || *first == '+')) ++first;
  while (last > first && last[-1] == ' ') --last;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    throw DataError(DataErrc::parse_error, "config: key '" + key + "' has invalid value '" + s + "'");
  return v;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& s) {
  std::vector<T> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t next = s.find(',', pos);
    const std::string item = s.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    if (!item.empty()) out.push_back(parse_number<T>(key, item));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

}  // namespace

double Config::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  return v ? parse_number<double>(key, *v) : fallback;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  auto v = get(key);
  return v ? parse_number<std::int64_t>(key, *v) : fallback;
}

std::uint64_t Config::get_uint(const std::string& key, std::uint64_t fallback) const {
  auto v = get(key);
  return v ? parse_number<std::uint64_t>(key, *v) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw DataError(DataErrc::parse_error, "config: key '" + key + "' is not a boolean: '" + *v + "'");
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  auto v = get(key);
  return v ? parse_list<double>(key, *v) : fallback;
}

std::vector<std::int64_t> Config::get_ints(const std::string& key, const std::vector<std::int64_t>& fallback) const {
  auto v = get(key);
  return v ? parse_list<std::int64_t>(key, *v) : fallback;
}

void Config::merge(const Config& other) {
  for (const auto& [section, child] : other.tree_) {
    if (child.empty()) {
      tree_.put(section, child.data());
      continue;
    }
    for (const auto& [key, leaf] : child) tree_.put(section + "." + key, leaf.data());
  }
}

}  // namespace patchcast
