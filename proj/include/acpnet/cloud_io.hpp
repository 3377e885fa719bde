#pragma once

// Plain-text cloud format. One header line followed by `count` body lines:
//
//   ACPCLOUD fields=x,y,z[,r,g,b][,label] count=<N>
//   <x> <y> <z> [<r> <g> <b>] [<label>]
//
// Values are whitespace separated; floats are written with 17 significant
// digits so positions and colors round-trip exactly.

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "acpnet/geometry.hpp"

namespace acpnet {

class CloudFormatError : public std::runtime_error {
 public:
  CloudFormatError(std::size_t line, const std::string& what)
      : std::runtime_error("cloud file line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline void write_cloud(std::ostream& os, const PointCloud& cloud) {
  cloud.validate();
  os << "ACPCLOUD fields=x,y,z" << (cloud.colors ? ",r,g,b" : "") << (cloud.labels ? ",label" : "")
     << " count=" << cloud.size() << '\n';
  char buf[64];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      std::snprintf(buf, sizeof buf, a ? " %.17g" : "%.17g", cloud.positions[i][a]);
      os << buf;
    }
    if (cloud.colors) {
      for (int a = 0; a < 3; ++a) {
        std::snprintf(buf, sizeof buf, " %.17g", (*cloud.colors)[i][a]);
        os << buf;
      }
    }
    if (cloud.labels) os << ' ' << (*cloud.labels)[i];
    os << '\n';
  }
}

inline void write_cloud(const std::string& path, const PointCloud& cloud) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_cloud: cannot open " + path);
  write_cloud(os, cloud);
  if (!os) throw std::runtime_error("write_cloud: write failed for " + path);
}

inline PointCloud read_cloud(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw CloudFormatError(1, "missing header");
  std::istringstream header(line);
  std::string magic, fields_tok, count_tok, extra;
  header >> magic >> fields_tok >> count_tok;
  if (magic != "ACPCLOUD") throw CloudFormatError(1, "expected 'ACPCLOUD' header");
  if (fields_tok.rfind("fields=", 0) != 0) throw CloudFormatError(1, "expected fields=...");
  if (count_tok.rfind("count=", 0) != 0) throw CloudFormatError(1, "expected count=...");
  if (header >> extra) throw CloudFormatError(1, "unexpected header token '" + extra + "'");
  const std::string fields = fields_tok.substr(7);
  bool colors = false, labels = false;
  if (fields == "x,y,z") {
  } else if (fields == "x,y,z,r,g,b") {
    colors = true;
  } else if (fields == "x,y,z,label") {
    labels = true;
  } else if (fields == "x,y,z,r,g,b,label") {
    colors = labels = true;
  } else {
    throw CloudFormatError(1, "unsupported field list '" + fields + "'");
  }
  std::size_t expected = 0;
  try {
    std::size_t used = 0;
    expected = std::stoull(count_tok.substr(6), &used);
    if (used != count_tok.size() - 6) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw CloudFormatError(1, "malformed count '" + count_tok + "'");
  }

  PointCloud cloud;
  if (colors) cloud.colors.emplace();
  if (labels) cloud.labels.emplace();
  const std::size_t width = 3 + (colors ? 3 : 0) + (labels ? 1 : 0);
  std::size_t lineno = 1, body = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++body;
    if (body > expected) continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.size() != width) {
      throw CloudFormatError(lineno, "expected " + std::to_string(width) + " values, found " + std::to_string(tok.size()));
    }
    auto number = [&](const std::string& t) {
      try {
        std::size_t used = 0;
        const double v = std::stod(t, &used);
        if (used != t.size()) throw std::invalid_argument("trailing");
        return v;
      } catch (const std::exception&) {
        throw CloudFormatError(lineno, "malformed number '" + t + "'");
      }
    };
    cloud.positions.push_back({number(tok[0]), number(tok[1]), number(tok[2])});
    if (colors) cloud.colors->push_back({number(tok[3]), number(tok[4]), number(tok[5])});
    if (labels) {
      const std::string& t = tok.back();
      try {
        std::size_t used = 0;
        const int v = std::stoi(t, &used);
        if (used != t.size()) throw std::invalid_argument("trailing");
        cloud.labels->push_back(v);
      } catch (const std::exception&) {
        throw CloudFormatError(lineno, "malformed label '" + t + "'");
      }
    }
  }
  if (body != expected) {
    throw CloudFormatError(lineno, "header declares " + std::to_string(expected) + " points but body has " +
                                       std::to_string(body));
  }
  cloud.validate();
  return cloud;
}

inline PointCloud read_cloud(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_cloud: cannot open " + path);
  return read_cloud(is);
}

}  // namespace acpnet
