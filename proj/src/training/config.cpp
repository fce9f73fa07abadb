#include "semfield/config.hpp"

#include "semfield/image_io.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace semfield {
namespace {

namespace pt = boost::property_tree;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& s) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }
}

long long parse_int(const std::string& key, const std::string& s) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

/// Binds every key to a member so parsing and printing share one table.
struct Field {
  std::function<void(const std::string&, const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
Field int_field(T& ref) {
  return {[&ref](const std::string& k, const std::string& v) { ref = static_cast<T>(parse_int(k, v)); },
          [&ref] { return std::to_string(ref); }};
}

Field double_field(double& ref) {
  return {[&ref](const std::string& k, const std::string& v) { ref = parse_double(k, v); }, [&ref] { return fmt(ref); }};
}

Field bool_field(bool& ref) {
  return {[&ref](const std::string& k, const std::string& v) { ref = parse_bool(k, v); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

Field string_field(std::string& ref) {
  return {[&ref](const std::string&, const std::string& v) { ref = v; }, [&ref] { return ref; }};
}

Field schedule_field(std::vector<ScheduleStage>& ref) {
  return {[&ref](const std::string& k, const std::string& v) {
            ref.clear();
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ',')) {
              item.erase(0, item.find_first_not_of(' '));
              item.erase(item.find_last_not_of(' ') + 1);
              if (item.empty()) continue;
              ScheduleStage s;
              char c1 = 0, c2 = 0;
              std::istringstream is(item);
              if (!(is >> s.iteration >> c1 >> s.resolution >> c2 >> s.batch) || c1 != ':' || c2 != ':' || !is.eof()) {
                throw ConfigError(k + ": expected iteration:resolution:batch entries, got '" + item + "'");
              }
              ref.push_back(s);
            }
          },
          [&ref] {
            std::string out;
            for (const auto& s : ref) {
              if (!out.empty()) out += ", ";
              out += std::to_string(s.iteration) + ":" + std::to_string(s.resolution) + ":" + std::to_string(s.batch);
            }
            return out;
          }};
}

Field interp_field(GridInterp& ref) {
  return {[&ref](const std::string& k, const std::string& v) {
            if (v == "trilinear") ref = GridInterp::trilinear;
            else if (v == "tricubic") ref = GridInterp::tricubic;
            else throw ConfigError(k + ": expected trilinear or tricubic, got '" + v + "'");
          },
          [&ref] { return std::string(ref == GridInterp::trilinear ? "trilinear" : "tricubic"); }};
}

Field injection_field(GridInjection& ref) {
  return {[&ref](const std::string& k, const std::string& v) {
            if (v == "color_branch") ref = GridInjection::color_branch;
            else if (v == "trunk_input") ref = GridInjection::trunk_input;
            else if (v == "none") ref = GridInjection::none;
            else throw ConfigError(k + ": expected color_branch, trunk_input or none, got '" + v + "'");
          },
          [&ref] {
            switch (ref) {
              case GridInjection::color_branch: return std::string("color_branch");
              case GridInjection::trunk_input: return std::string("trunk_input");
              case GridInjection::none: return std::string("none");
            }
            return std::string();
          }};
}

Field seed_field(uint64_t& ref) {
  return {[&ref](const std::string& k, const std::string& v) {
            uint64_t x = 0;
            const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
            if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(k + ": expected an unsigned integer");
            ref = x;
          },
          [&ref] { return std::to_string(ref); }};
}

/// Ordered (section.key → field) table.
std::vector<std::pair<std::string, Field>> fields(Config& c) {
  auto& g = c.generator;
  auto& t = c.train;
  return {
      {"data.manifest", string_field(c.manifest)},
      {"generator.k", int_field(g.k)},
      {"generator.shape_dim", int_field(g.shape_dim)},
      {"generator.texture_dim", int_field(g.texture_dim)},
      {"generator.mapping_hidden", int_field(g.mapping_hidden)},
      {"generator.trunk_layers", int_field(g.trunk_layers)},
      {"generator.trunk_width", int_field(g.trunk_width)},
      {"generator.color_width", int_field(g.color_width)},
      {"generator.grid_size", int_field(g.grid_size)},
      {"generator.grid_features", int_field(g.grid_features)},
      {"generator.grid_interp", interp_field(g.grid_interp)},
      {"generator.grid_injection", injection_field(g.grid_injection)},
      {"generator.omega0", double_field(g.omega0)},
      {"generator.half_extent", double_field(g.half_extent)},
      {"generator.density_scale", double_field(g.density_scale)},
      {"generator.density_bias_init", double_field(g.density_bias_init)},
      {"sampling.samples", int_field(c.sampling.samples)},
      {"sampling.stratified", bool_field(c.sampling.stratified)},
      {"sampling.near", double_field(c.sampling.near)},
      {"sampling.far", double_field(c.sampling.far)},
      {"camera.radius", double_field(c.camera.radius)},
      {"camera.fov_deg", double_field(c.camera.fov_deg)},
      {"camera.sigma_pitch", double_field(c.camera.pose.sigma_pitch)},
      {"camera.sigma_yaw", double_field(c.camera.pose.sigma_yaw)},
      {"camera.max_pitch", double_field(c.camera.pose.max_pitch)},
      {"camera.max_yaw", double_field(c.camera.pose.max_yaw)},
      {"train.resolution", int_field(t.resolution)},
      {"train.batch", int_field(t.batch)},
      {"train.iterations", int_field(t.iterations)},
      {"train.seed", seed_field(t.seed)},
      {"train.lambda_c", double_field(t.weights.lambda_c)},
      {"train.lambda_s", double_field(t.weights.lambda_s)},
      {"train.lambda_p", double_field(t.weights.lambda_p)},
      {"train.squared_pose", bool_field(t.weights.squared_pose)},
      {"train.lr_g", double_field(t.lr_g)},
      {"train.lr_dc", double_field(t.lr_dc)},
      {"train.lr_ds", double_field(t.lr_ds)},
      {"train.beta1", double_field(t.beta1)},
      {"train.beta2", double_field(t.beta2)},
      {"train.image_branch", bool_field(t.image_branch)},
      {"train.semantic_branch", bool_field(t.semantic_branch)},
      {"train.schedule", schedule_field(t.schedule)},
      {"train.log_every", int_field(t.log_every)},
      {"train.checkpoint_every", int_field(t.checkpoint_every)},
      {"inversion.steps", int_field(c.inversion.steps)},
      {"inversion.lr", double_field(c.inversion.lr)},
      {"inversion.w_rgb", double_field(c.inversion.w_rgb)},
      {"inversion.w_sem", double_field(c.inversion.w_sem)},
      {"inversion.mu", double_field(c.inversion.mu)},
      {"inversion.optimize_pose", bool_field(c.inversion.optimize_pose)},
      {"dataset.n_scenes", int_field(c.dataset.n_scenes)},
      {"dataset.resolution", int_field(c.dataset.resolution)},
      {"dataset.seed", seed_field(c.dataset.seed)},
      {"service.host", string_field(c.service.host)},
      {"service.port", int_field(c.service.port)},
      {"service.checkpoint", string_field(c.service.checkpoint)},
      {"service.artifact_dir", string_field(c.service.artifact_dir)},
      {"service.max_concurrent_jobs", int_field(c.service.max_concurrent_jobs)},
      {"service.queue_limit", int_field(c.service.queue_limit)},
      {"service.retention", int_field(c.service.retention)},
  };
}

}  // namespace

void ServiceConfig::validate() const {
  if (max_concurrent_jobs < 1) throw ConfigError("service.max_concurrent_jobs must be >= 1");
  if (queue_limit < 0) throw ConfigError("service.queue_limit must be >= 0");
  if (retention < 1) throw ConfigError("service.retention must be >= 1");
  if (port < 0 || port > 65535) throw ConfigError("service.port out of range");
}

void Config::validate() const {
  try {
    generator.validate();
    sampling.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (train.batch < 1) throw ConfigError("train.batch must be >= 1");
  if (train.iterations < 0) throw ConfigError("train.iterations must be >= 0");
  if (train.resolution < 4 || (train.resolution & (train.resolution - 1)) != 0) {
    throw ConfigError("train.resolution must be a power of two >= 4");
  }
  for (const auto& s : train.schedule) {
    if (s.batch < 1 || s.resolution < 4 || (s.resolution & (s.resolution - 1)) != 0) {
      throw ConfigError("train.schedule has an invalid stage");
    }
  }
  const auto& w = train.weights;
  if (w.lambda_c < 0 || w.lambda_s < 0 || w.lambda_p < 0) throw ConfigError("loss weights must be >= 0");
  if (inversion.steps < 0) throw ConfigError("inversion.steps must be >= 0");
  if (inversion.w_rgb < 0 || inversion.w_sem < 0 || inversion.w_rgb + inversion.w_sem <= 0) {
    throw ConfigError("inversion needs a positive objective weight");
  }
  if (!(camera.radius > 0)) throw ConfigError("camera.radius must be positive");
  if (camera.pose.sigma_pitch < 0 || camera.pose.sigma_yaw < 0) throw ConfigError("camera sigmas must be >= 0");
  service.validate();
}

Config parse_config(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  Config c;
  auto table = fields(c);
  std::map<std::string, Field*> by_key;
  for (auto& [k, f] : table) by_key[k] = &f;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: key '" + section + "' must sit inside a [section]");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      auto it = by_key.find(full);
      if (it == by_key.end()) throw ConfigError("config: unknown key '" + full + "'");
      it->second->set(full, value.get_value<std::string>());
    }
  }
  c.dataset.k = c.generator.k;
  c.dataset.pose = c.camera.pose;
  c.dataset.radius = c.camera.radius;
  c.dataset.fov_deg = c.camera.fov_deg;
  c.validate();
  return c;
}

Config load_config(const std::filesystem::path& path) {
  const Bytes raw = read_file(path);
  Config c = parse_config(std::string(raw.begin(), raw.end()));
  // A relative manifest is taken relative to the config file.
  if (!c.manifest.empty() && std::filesystem::path(c.manifest).is_relative()) {
    c.manifest = (path.parent_path() / c.manifest).lexically_normal().string();
  }
  return c;
}

std::string to_text(const Config& c0) {
  Config c = c0;
  std::string out, section;
  for (auto& [key, field] : fields(c)) {
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out += "\n";
      out += "[" + s + "]\n";
      section = s;
    }
    out += key.substr(dot + 1) + " = " + field.get() + "\n";
  }
  return out;
}

}  // namespace semfield
