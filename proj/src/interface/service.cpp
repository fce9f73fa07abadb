#include "semfield/service.hpp"

#include "semfield/image_io.hpp"

#include <httplib.h>

#include <random>

namespace semfield {
namespace {

using nlohmann::json;

class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message, const std::string& field = "") {
  json body{{"error", message}};
  if (!field.empty()) body["field"] = field;
  reply(res, status, body);
}

json parse_body(const httplib::Request& req, bool allow_empty) {
  if (req.body.empty() && allow_empty) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw RequestError("body", "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw RequestError("body", std::string("malformed JSON: ") + e.what());
  }
}

const json& require(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw RequestError(where + key, "missing field");
  return j.at(key);
}

double number(const json& j, const std::string& key, const std::string& where, std::optional<double> fallback = {}) {
  if (!j.contains(key)) {
    if (fallback) return *fallback;
    throw RequestError(where + key, "missing field");
  }
  if (!j.at(key).is_number()) throw RequestError(where + key, "expected a number");
  return j.at(key).get<double>();
}

int integer(const json& j, const std::string& key, const std::string& where, int fallback, int lo, int hi) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer()) throw RequestError(where + key, "expected an integer");
  const auto v = j.at(key).get<int64_t>();
  if (v < lo || v > hi) {
    throw RequestError(where + key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return static_cast<int>(v);
}

std::string text(const json& j, const std::string& key, const std::string& where) {
  const json& v = require(j, key, where);
  if (!v.is_string()) throw RequestError(where + key, "expected a string");
  return v.get<std::string>();
}

bool safe_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') return false;
  return true;
}

Tensor<float> vector_field(const json& j, const std::string& key, const std::string& where, int64_t dim) {
  const json& v = require(j, key, where);
  if (!v.is_array() || static_cast<int64_t>(v.size()) != dim) {
    throw RequestError(where + key, "expected an array of " + std::to_string(dim) + " numbers");
  }
  Tensor<float> t({dim});
  auto tv = t.mutable_values();
  for (size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw RequestError(where + key, "expected numbers");
    tv[i] = v[i].get<float>();
    if (!std::isfinite(tv[i])) throw RequestError(where + key, "values must be finite");
  }
  return t;
}

json tensor_json(const Tensor<float>& t) { return json(std::vector<float>(t.data(), t.data() + t.size())); }

std::string content_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".json") return "application/json";
  if (ext == ".jsonl") return "application/x-ndjson";
  return "application/octet-stream";
}

}  // namespace

Service::Service(ServiceConfig config, Model model)
    : config_(std::move(config)), model_(std::move(model)), artifacts_(config_.artifact_dir) {
  config_.validate();
  model_.config.sampling.stratified = false;
  std::filesystem::create_directories(artifacts_ / "latents");
  server_ = std::make_unique<httplib::Server>();
  jobs_ = std::make_unique<JobTable>(config_.max_concurrent_jobs, config_.queue_limit, config_.retention, artifacts_);
  routes();
}

Service::~Service() { stop(); }

bool Service::listen() { return server_->listen(config_.host, config_.port); }

int Service::start_background() {
  const int port = server_->bind_to_any_port(config_.host);
  if (port < 0) throw std::runtime_error("could not bind " + config_.host);
  background_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void Service::stop() {
  if (server_) server_->stop();
  if (background_.joinable()) background_.join();
}

std::string Service::store_latent(const LatentPair& z) {
  char suffix[9];
  std::snprintf(suffix, sizeof suffix, "%08x", std::random_device{}());
  const std::string id = "lat-" + std::to_string(++latent_counter_) + "-" + suffix;
  latents_archive(z).save(artifacts_ / "latents" / (id + ".fnrf"));
  std::lock_guard lock(latent_mu_);
  latents_[id] = z;
  return id;
}

LatentPair Service::latent(const std::string& id) const {
  {
    std::lock_guard lock(latent_mu_);
    auto it = latents_.find(id);
    if (it != latents_.end()) return it->second;
  }
  const auto path = artifacts_ / "latents" / (id + ".fnrf");
  if (!safe_id(id) || !std::filesystem::exists(path)) throw NotFound("unknown latent id '" + id + "'");
  LatentPair z = latents_from_archive(TensorArchive::load(path));
  std::lock_guard lock(latent_mu_);
  latents_[id] = z;
  return z;
}

LatentPair Service::latent_from_json(const json& body, const std::string& where) const {
  if (body.contains("latent_id")) return latent(text(body, "latent_id", where));
  if (!body.contains("latents")) throw RequestError(where + "latent_id", "need latent_id or latents");
  const json& l = body.at("latents");
  if (!l.is_object()) throw RequestError(where + "latents", "expected an object");
  const auto& g = model_.config.generator;
  return {vector_field(l, "z_s", where + "latents.", g.shape_dim), vector_field(l, "z_t", where + "latents.", g.texture_dim)};
}

std::vector<std::string> Service::write_render(const Render& r, const std::filesystem::path& dir,
                                               const std::string& url_prefix, const std::string& stem) const {
  std::filesystem::create_directories(dir);
  const auto& s = model_.config.sampling;
  write_file_atomic(dir / (stem + "image.png"), encode_rgb_png(r.rgb));
  write_file_atomic(dir / (stem + "mask.png"), encode_label_png(r.labels));
  write_file_atomic(dir / (stem + "mask_preview.png"), encode_label_preview_png(r.labels));
  write_file_atomic(dir / (stem + "depth.png"),
                    encode_depth_png(r.depth, static_cast<float>(s.near), static_cast<float>(s.far)));
  return {url_prefix + stem + "image.png", url_prefix + stem + "mask.png", url_prefix + stem + "mask_preview.png",
          url_prefix + stem + "depth.png"};
}

namespace {

CameraPose pose_from(const json& body, const std::string& key, const std::string& where, const CameraConfig& cam) {
  CameraPose p{0, 0, cam.radius, cam.fov_deg};
  if (!body.contains(key)) return p;
  const json& j = body.at(key);
  if (!j.is_object()) throw RequestError(where + key, "expected {pitch, yaw}");
  p.pitch = number(j, "pitch", where + key + ".", 0.0);
  p.yaw = number(j, "yaw", where + key + ".", 0.0);
  if (std::abs(p.pitch) >= 1.5) throw RequestError(where + key + ".pitch", "pitch must lie in (-1.5, 1.5)");
  return p;
}

LabelMap mask_from(const json& body, const std::string& key, const std::string& where, int k) {
  const std::string b64 = text(body, key, where);
  LabelMap m;
  try {
    m = decode_label_png(base64_decode(b64));
  } catch (const std::exception& e) {
    throw RequestError(where + key, std::string("not a base64 label PNG: ") + e.what());
  }
  if (m.width != m.height || (m.width != 32 && m.width != 64 && m.width != 128)) {
    throw RequestError(where + key, "mask must be square at 32, 64 or 128 pixels");
  }
  for (uint8_t l : m.labels)
    if (l >= k) throw RequestError(where + key, "label " + std::to_string(l) + " exceeds the model's classes");
  return m;
}

}  // namespace

JobFn Service::make_job(const std::string& kind, const json& payload) {
  const std::string w = "payload.";
  const auto& cfg = model_.config;
  const int k = cfg.generator.k;
  const int steps_default = std::max(1, cfg.inversion.steps);

  if (kind == "invert-semantic" || kind == "invert-full") {
    InversionTask task;
    task.mask = mask_from(payload, "mask", w, k);
    task.pose = pose_from(payload, "pose", w, cfg.camera);
    task.steps = integer(payload, "steps", w, steps_default, 1, 10000);
    task.lr = number(payload, "lr", w, cfg.inversion.lr);
    task.seed = static_cast<uint64_t>(integer(payload, "seed", w, 0, 0, 1 << 30));
    task.w_rgb = number(payload, "w_rgb", w, cfg.inversion.w_rgb);
    task.w_sem = number(payload, "w_sem", w, cfg.inversion.w_sem);
    const bool full = kind == "invert-full";
    if (full) {
      try {
        task.image = decode_rgb_png(base64_decode(text(payload, "image", w)));
      } catch (const RequestError&) {
        throw;
      } catch (const std::exception& e) {
        throw RequestError(w + "image", std::string("not a base64 RGB PNG: ") + e.what());
      }
      if (task.image->shape() != Shape{task.mask.height, task.mask.width, 3}) {
        throw RequestError(w + "image", "image and mask sizes differ");
      }
    }
    try {
      task.validate(k);
    } catch (const std::exception& e) {
      throw RequestError("payload", e.what());
    }
    return [this, task, full](JobContext& ctx) {
      InversionControl control;
      control.cancelled = [&ctx] { return ctx.cancelled(); };
      std::string trace;
      control.progress = [&](const TraceRecord& r) {
        trace += to_ndjson(r) + "\n";
        ctx.progress(r.iter + 1, task.steps);
      };
      const auto& g = model_.config.generator;
      const InversionResult r = full ? invert_full(model_.generator, g, model_.config.sampling, task, control)
                                     : invert_semantic(model_.generator, g, model_.config.sampling, task, control);
      JobOutput out;
      if (r.cancelled) return out;
      write_file_atomic(ctx.dir() / "trace.jsonl", trace);
      latents_archive({r.z_s, r.z_t}).save(ctx.dir() / "latents.fnrf");
      out.latent = store_latent({r.z_s, r.z_t});
      out.results = write_render(render_view(model_.generator, g, r.z_s, r.z_t, r.pose, model_.config.sampling,
                                             task.resolution()),
                                 ctx.dir(), ctx.url(""), "");
      out.results.push_back(ctx.url("trace.jsonl"));
      out.results.push_back(ctx.url("latents.fnrf"));
      return out;
    };
  }

  if (kind == "local-edit") {
    const LatentPair z = latent(text(payload, "latent_id", w));
    const LabelMap mask = mask_from(payload, "mask", w, k);
    const CameraPose pose = pose_from(payload, "pose", w, cfg.camera);
    const int steps = integer(payload, "steps", w, steps_default, 1, 10000);
    const double lr = number(payload, "lr", w, cfg.inversion.lr);
    const double mu = number(payload, "mu", w, cfg.inversion.mu);
    if (mu < 0) throw RequestError(w + "mu", "must be >= 0");
    return [this, z, mask, pose, steps, lr, mu](JobContext& ctx) {
      InversionControl control;
      control.cancelled = [&ctx] { return ctx.cancelled(); };
      std::string trace;
      control.progress = [&](const TraceRecord& r) {
        trace += to_ndjson(r) + "\n";
        ctx.progress(r.iter + 1, steps);
      };
      const auto& g = model_.config.generator;
      const InversionResult r = local_edit(model_.generator, g, model_.config.sampling, z.z_s, z.z_t, mask, pose,
                                           steps, lr, mu, control);
      JobOutput out;
      if (r.cancelled) return out;
      write_file_atomic(ctx.dir() / "trace.jsonl", trace);
      latents_archive({r.z_s, r.z_t}).save(ctx.dir() / "latents.fnrf");
      out.latent = store_latent({r.z_s, r.z_t});
      out.results = write_render(render_view(model_.generator, g, r.z_s, r.z_t, pose, model_.config.sampling, mask.height),
                                 ctx.dir(), ctx.url(""), "");
      out.results.push_back(ctx.url("trace.jsonl"));
      out.results.push_back(ctx.url("latents.fnrf"));
      return out;
    };
  }

  const int res = integer(payload, "resolution", w, model_.d_resolution, 8, 256);
  if (kind == "render") {
    const LatentPair z = latent_from_json(payload, w);
    std::vector<CameraPose> poses;
    if (payload.contains("poses")) {
      const json& list = payload.at("poses");
      if (!list.is_array() || list.empty() || list.size() > 64) throw RequestError(w + "poses", "expected 1 to 64 poses");
      for (size_t i = 0; i < list.size(); ++i) {
        json holder{{"p", list[i]}};
        poses.push_back(pose_from(holder, "p", w + "poses[" + std::to_string(i) + "]", cfg.camera));
      }
    } else {
      poses.push_back(pose_from(payload, "pose", w, cfg.camera));
    }
    return [this, z, poses, res](JobContext& ctx) {
      JobOutput out;
      for (size_t i = 0; i < poses.size(); ++i) {
        if (ctx.cancelled()) return out;
        const Render r = render_view(model_.generator, model_.config.generator, z.z_s, z.z_t, poses[i],
                                     model_.config.sampling, res);
        const auto urls = write_render(r, ctx.dir(), ctx.url(""), "view" + std::to_string(i) + "_");
        out.results.insert(out.results.end(), urls.begin(), urls.end());
        ctx.progress(static_cast<int64_t>(i) + 1, static_cast<int64_t>(poses.size()));
      }
      return out;
    };
  }

  if (kind == "morph") {
    const LatentPair a = latent(text(payload, "a", w));
    const LatentPair b = latent(text(payload, "b", w));
    const int n = integer(payload, "n", w, 3, 2, 8);
    const CameraPose pose = pose_from(payload, "pose", w, cfg.camera);
    return [this, a, b, n, pose, res](JobContext& ctx) {
      JobOutput out;
      const auto& g = model_.config.generator;
      const auto grid = morph_grid(model_.generator, g, model_.config.sampling, a, b, n, pose, res);
      for (size_t c = 0; c < grid.size(); ++c) {
        if (ctx.cancelled()) return out;
        const auto urls = write_render(grid[c], ctx.dir(), ctx.url(""),
                                       "cell" + std::to_string(c / n) + "_" + std::to_string(c % n) + "_");
        out.results.insert(out.results.end(), urls.begin(), urls.end());
        ctx.progress(static_cast<int64_t>(c) + 1, static_cast<int64_t>(grid.size()));
      }
      return out;
    };
  }
  throw RequestError("kind", "unknown job kind '" + kind + "'");
}

void Service::routes() {
  auto guarded = [](auto fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const RequestError& e) {
        reply_error(res, 400, e.what(), e.field);
      } catch (const NotFound& e) {
        reply_error(res, 404, e.what());
      } catch (const std::exception& e) {
        reply_error(res, 500, e.what());
      }
    };
  };

  server_->Get("/model", guarded([this](const httplib::Request&, httplib::Response& res) {
    const auto& g = model_.config.generator;
    reply(res, 200,
          {{"k", g.k},
           {"resolution", model_.d_resolution},
           {"shape_dim", g.shape_dim},
           {"texture_dim", g.texture_dim},
           {"job_kinds", job_kinds()},
           {"camera", {{"radius", model_.config.camera.radius}, {"fov_deg", model_.config.camera.fov_deg}}}});
  }));

  server_->Post("/sample", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req, true);
    const int count = integer(body, "count", "", 1, 1, 16);
    const uint64_t seed = body.contains("seed") ? static_cast<uint64_t>(integer(body, "seed", "", 0, 0, 1 << 30))
                                                : std::random_device{}();
    const int res_px = integer(body, "resolution", "", model_.d_resolution, 8, 256);
    const auto& g = model_.config.generator;
    Rng rng(seed);
    json out = json::array();
    for (int i = 0; i < count; ++i) {
      LatentPair z{sample_latents(rng, 1, g.shape_dim).reshaped({g.shape_dim}),
                   sample_latents(rng, 1, g.texture_dim).reshaped({g.texture_dim})};
      const std::string id = store_latent(z);
      json previews = json::array();
      const double yaws[3] = {-0.3, 0.0, 0.3};
      for (int v = 0; v < 3; ++v) {
        CameraPose pose{0.0, yaws[v], model_.config.camera.radius, model_.config.camera.fov_deg};
        const Render r = render_view(model_.generator, g, z.z_s, z.z_t, pose, model_.config.sampling, res_px);
        const auto urls = write_render(r, artifacts_ / "latents" / id, "/artifacts/latents/" + id + "/",
                                       "view" + std::to_string(v) + "_");
        previews.push_back({{"pose", {{"pitch", pose.pitch}, {"yaw", pose.yaw}}},
                            {"image", urls[0]},
                            {"mask", urls[1]},
                            {"mask_preview", urls[2]},
                            {"depth", urls[3]}});
      }
      out.push_back({{"id", id}, {"z_s", tensor_json(z.z_s)}, {"z_t", tensor_json(z.z_t)}, {"previews", previews}});
    }
    reply(res, 200, {{"latents", out}});
  }));

  server_->Post("/render", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req, false);
    const LatentPair z = latent_from_json(body, "");
    const CameraPose pose = pose_from(body, "pose", "", model_.config.camera);
    const int res_px = integer(body, "resolution", "", model_.d_resolution, 8, 256);
    const Render r = render_view(model_.generator, model_.config.generator, z.z_s, z.z_t, pose, model_.config.sampling, res_px);
    char name[32];
    std::snprintf(name, sizeof name, "r%08x", std::random_device{}());
    const auto urls = write_render(r, artifacts_ / "renders" / name, std::string("/artifacts/renders/") + name + "/", "");
    reply(res, 200, {{"image", urls[0]}, {"mask", urls[1]}, {"mask_preview", urls[2]}, {"depth", urls[3]}});
  }));

  server_->Post("/jobs", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req, false);
    const std::string kind = text(body, "kind", "");
    if (std::find(job_kinds().begin(), job_kinds().end(), kind) == job_kinds().end()) {
      throw RequestError("kind", "unknown job kind '" + kind + "'");
    }
    const json payload = body.contains("payload") ? body.at("payload") : json::object();
    if (!payload.is_object()) throw RequestError("payload", "expected an object");
    JobFn fn = make_job(kind, payload);
    const auto id = jobs_->submit(kind, std::move(fn));
    if (!id) {
      reply_error(res, 429, "job queue is full");
      return;
    }
    reply(res, 201, to_json(*jobs_->get(*id)));
  }));

  server_->Get(R"(/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto r = jobs_->get(req.matches[1]);
    if (!r) throw NotFound("unknown job id");
    reply(res, 200, to_json(*r));
  }));

  server_->Delete(R"(/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!jobs_->cancel(id)) throw NotFound("unknown job id");
    const auto r = jobs_->get(id);
    reply(res, 200, r ? to_json(*r) : json{{"id", id}, {"status", "failed"}, {"error", "cancelled"}});
  }));

  server_->Get(R"(/artifacts/(.+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const std::filesystem::path rel(req.matches[1].str());
    for (const auto& part : rel)
      if (part == ".." || part == "." || rel.is_absolute()) throw NotFound("no such artifact");
    const auto path = artifacts_ / rel;
    if (!std::filesystem::is_regular_file(path)) throw NotFound("no such artifact");
    const Bytes bytes = read_file(path);
    res.status = 200;
    res.set_content(std::string(bytes.begin(), bytes.end()), content_type(path));
  }));
}

}  // namespace semfield
