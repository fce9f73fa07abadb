#include "semfield/service.hpp"

#include <random>

namespace semfield {

std::string_view status_name(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "unknown";
}

nlohmann::json to_json(const JobRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["kind"] = r.kind;
  j["status"] = status_name(r.status);
  j["progress"] = {{"iter", r.iter}, {"total", r.total}};
  j["results"] = r.results;
  if (!r.error.empty()) j["error"] = r.error;
  if (!r.latent.empty()) j["latent_id"] = r.latent;
  return j;
}

void JobContext::progress(int64_t iter, int64_t total) {
  if (on_progress_) on_progress_(iter, total);
}

JobTable::JobTable(int workers, int queue_limit, int retention, std::filesystem::path artifact_dir)
    : queue_limit_(queue_limit), retention_(retention), artifact_dir_(std::move(artifact_dir)) {
  if (workers < 1) throw std::invalid_argument("JobTable needs at least one worker");
  for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { worker(); });
}

JobTable::~JobTable() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
    for (auto& [id, e] : jobs_) e.cancel->store(true);
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

std::optional<std::string> JobTable::submit(const std::string& kind, JobFn fn) {
  std::lock_guard lock(mu_);
  if (static_cast<int>(queue_.size()) >= queue_limit_) return std::nullopt;
  std::random_device rd;
  char suffix[9];
  std::snprintf(suffix, sizeof suffix, "%08x", rd());
  const std::string id = "job-" + std::to_string(++counter_) + "-" + suffix;
  Entry e;
  e.record.id = id;
  e.record.kind = kind;
  e.fn = std::move(fn);
  jobs_.emplace(id, std::move(e));
  queue_.push_back(id);
  cv_.notify_all();
  return id;
}

std::optional<JobRecord> JobTable::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second.record;
}

bool JobTable::cancel(const std::string& id) {
  std::unique_lock lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return false;
  it->second.cancel->store(true);
  if (it->second.record.status == JobStatus::queued) {
    std::erase(queue_, id);
    lock.unlock();
    finish(id, JobStatus::failed, {}, "cancelled");
  }
  return true;
}

std::optional<JobRecord> JobTable::wait(const std::string& id) const {
  std::unique_lock lock(mu_);
  std::optional<JobRecord> out;
  cv_.wait(lock, [&] {
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return true;
    const auto s = it->second.record.status;
    if (s == JobStatus::done || s == JobStatus::failed) {
      out = it->second.record;
      return true;
    }
    return false;
  });
  return out;
}

void JobTable::worker() {
  for (;;) {
    std::string id;
    JobContext ctx;
    JobFn fn;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = queue_.front();
      queue_.pop_front();
      Entry& e = jobs_.at(id);
      e.record.status = JobStatus::running;
      fn = e.fn;
      ctx.cancel_ = e.cancel;
      ctx.dir_ = artifact_dir_ / "jobs" / id;
      ctx.url_prefix_ = "/artifacts/jobs/" + id + "/";
      ctx.on_progress_ = [this, id](int64_t iter, int64_t total) {
        std::lock_guard inner(mu_);
        auto it = jobs_.find(id);
        if (it == jobs_.end()) return;
        auto& r = it->second.record;
        r.total = total;
        r.iter = std::max(r.iter, iter);
      };
      cv_.notify_all();
    }
    try {
      std::filesystem::create_directories(ctx.dir());
      JobOutput out = fn(ctx);
      if (ctx.cancelled()) finish(id, JobStatus::failed, {}, "cancelled");
      else finish(id, JobStatus::done, std::move(out), "");
    } catch (const std::exception& e) {
      finish(id, JobStatus::failed, {}, ctx.cancelled() ? "cancelled" : e.what());
    }
  }
}

void JobTable::finish(const std::string& id, JobStatus status, JobOutput out, std::string error) {
  {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return;
    auto& r = it->second.record;
    r.status = status;
    r.results = std::move(out.results);
    r.latent = std::move(out.latent);
    r.error = std::move(error);
    it->second.fn = nullptr;
    finished_.push_back(id);
    evict();
  }
  cv_.notify_all();
}

void JobTable::evict() {
  while (static_cast<int>(finished_.size()) > retention_) {
    jobs_.erase(finished_.front());
    finished_.pop_front();
  }
}

}  // namespace semfield
