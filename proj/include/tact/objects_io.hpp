#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tact/errors.hpp"
#include "tact/geometry.hpp"
#include "tact/rng.hpp"

namespace tact {

inline constexpr int kObjectSetFormatVersion = 1;

struct ObjectSet {
  int format_version = kObjectSetFormatVersion;
  int max_edges = 8;
  double max_radius_m = 0.10;
  std::vector<Polygon> objects;
};

// Draw `count` random polygons with dense ids 0..count-1. Each object comes
// from its own derived stream; in the (never observed) event of a duplicate
// vertex list, the offending stream is advanced until the set is distinct.
inline ObjectSet generate_object_set(int count, int max_edges, double max_radius,
                                     std::uint64_t master_seed) {
  if (count < 1) throw ConfigError("generate_object_set: count must be >= 1");
  ObjectSet set;
  set.max_edges = max_edges;
  set.max_radius_m = max_radius;
  for (int i = 0; i < count; ++i) {
    std::uint64_t salt = 0;
    while (true) {
      Rng rng(derive_seed(master_seed, static_cast<std::uint64_t>(i) + (salt << 32)));
      Polygon poly = generate_polygon(rng, max_edges, max_radius);
      poly.id = i;
      const bool duplicate = [&] {
        for (const Polygon& other : set.objects) {
          if (other.vertices.size() != poly.vertices.size()) continue;
          bool same = true;
          for (std::size_t v = 0; v < poly.vertices.size(); ++v) {
            if (other.vertices[v].x != poly.vertices[v].x ||
                other.vertices[v].y != poly.vertices[v].y) {
              same = false;
              break;
            }
          }
          if (same) return true;
        }
        return false;
      }();
      if (!duplicate) {
        set.objects.push_back(std::move(poly));
        break;
      }
      ++salt;
    }
  }
  return set;
}

inline void validate_object_set(const ObjectSet& set) {
  if (set.format_version != kObjectSetFormatVersion) {
    throw ConfigError("object set: unsupported format_version " +
                      std::to_string(set.format_version));
  }
  if (set.objects.empty()) throw ConfigError("object set: no objects");
  for (std::size_t i = 0; i < set.objects.size(); ++i) {
    const Polygon& p = set.objects[i];
    if (p.id != static_cast<int>(i)) {
      throw ConfigError("object set: ids must be dense 0..N-1 in order");
    }
    if (p.vertices.size() < 3) {
      throw ConfigError("object set: object " + std::to_string(p.id) + " has fewer than 3 vertices");
    }
    if (static_cast<int>(p.vertices.size()) > set.max_edges) {
      throw ConfigError("object set: object " + std::to_string(p.id) + " exceeds max_edges");
    }
    for (const Vec2& v : p.vertices) {
      if (v.x * v.x + v.y * v.y > set.max_radius_m * set.max_radius_m * (1.0 + 1e-9)) {
        throw ConfigError("object set: object " + std::to_string(p.id) +
                          " has a vertex outside max_radius_m");
      }
    }
    if (shoelace_area(p) <= 0.0) {
      throw ConfigError("object set: object " + std::to_string(p.id) +
                        " is not counter-clockwise");
    }
  }
}

inline std::string object_set_to_json(const ObjectSet& set) {
  nlohmann::json j;
  j["format_version"] = set.format_version;
  j["max_edges"] = set.max_edges;
  j["max_radius_m"] = set.max_radius_m;
  j["objects"] = nlohmann::json::array();
  for (const Polygon& p : set.objects) {
    nlohmann::json obj;
    obj["id"] = p.id;
    obj["vertices"] = nlohmann::json::array();
    for (const Vec2& v : p.vertices) obj["vertices"].push_back({v.x, v.y});
    j["objects"].push_back(std::move(obj));
  }
  return j.dump(2) + "\n";
}

inline ObjectSet object_set_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("object set: invalid JSON: ") + e.what());
  }
  ObjectSet set;
  try {
    set.format_version = j.at("format_version").get<int>();
    set.max_edges = j.at("max_edges").get<int>();
    set.max_radius_m = j.at("max_radius_m").get<double>();
    for (const nlohmann::json& obj : j.at("objects")) {
      Polygon p;
      p.id = obj.at("id").get<int>();
      for (const nlohmann::json& v : obj.at("vertices")) {
        if (!v.is_array() || v.size() != 2) {
          throw ConfigError("object set: vertex must be [x, y]");
        }
        p.vertices.push_back({v[0].get<double>(), v[1].get<double>()});
      }
      set.objects.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("object set: missing or mistyped field: ") + e.what());
  }
  validate_object_set(set);
  return set;
}

inline void write_object_set(const std::string& path, const ObjectSet& set) {
  validate_object_set(set);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("object set: cannot open for writing: " + path);
  os << object_set_to_json(set);
  if (!os) throw ConfigError("object set: write failed: " + path);
}

inline ObjectSet read_object_set(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("object set: cannot open: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return object_set_from_json(ss.str());
}

}  // namespace tact
