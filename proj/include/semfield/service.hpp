#pragma once

#include "semfield/config.hpp"
#include "semfield/inversion.hpp"
#include "semfield/training.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace semfield {

enum class JobStatus { queued, running, done, failed };
std::string_view status_name(JobStatus s);

inline const std::vector<std::string>& job_kinds() {
  static const std::vector<std::string> kinds{"invert-semantic", "invert-full", "local-edit", "render", "morph"};
  return kinds;
}

struct JobRecord {
  std::string id;
  std::string kind;
  JobStatus status = JobStatus::queued;
  int64_t iter = 0;
  int64_t total = 0;
  std::vector<std::string> results;  // artifact URLs
  std::string error;
  /// Id of the latent pair a job produced, if any.
  std::string latent;
};

nlohmann::json to_json(const JobRecord& r);

/// Raised while validating a request; becomes a 400 naming `field`.
class RequestError : public std::runtime_error {
 public:
  RequestError(std::string field, const std::string& what) : std::runtime_error(what), field(std::move(field)) {}
  std::string field;
};

/// Handle passed to a running job.
class JobContext {
 public:
  bool cancelled() const { return cancel_->load(); }
  void progress(int64_t iter, int64_t total);
  /// Directory for this job's artifacts, and the URL prefix that serves it.
  const std::filesystem::path& dir() const { return dir_; }
  std::string url(const std::string& file) const { return url_prefix_ + file; }

 private:
  friend class JobTable;
  std::shared_ptr<std::atomic<bool>> cancel_;
  std::function<void(int64_t, int64_t)> on_progress_;
  std::filesystem::path dir_;
  std::string url_prefix_;
};

struct JobOutput {
  std::vector<std::string> results;
  std::string latent;
};

using JobFn = std::function<JobOutput(JobContext&)>;

/// Synchronized job table with a bounded worker pool. At most
/// `queue_limit` jobs wait at once; finished jobs beyond `retention` are
/// forgotten oldest-first.
class JobTable {
 public:
  JobTable(int workers, int queue_limit, int retention, std::filesystem::path artifact_dir);
  ~JobTable();
  JobTable(const JobTable&) = delete;
  JobTable& operator=(const JobTable&) = delete;

  /// nullopt when the queue is full.
  std::optional<std::string> submit(const std::string& kind, JobFn fn);
  std::optional<JobRecord> get(const std::string& id) const;
  /// Queued jobs fail immediately; running jobs stop at their next
  /// iteration. Returns false for unknown ids.
  bool cancel(const std::string& id);
  /// Blocks until the job has finished (test helper).
  std::optional<JobRecord> wait(const std::string& id) const;

 private:
  struct Entry {
    JobRecord record;
    JobFn fn;
    std::shared_ptr<std::atomic<bool>> cancel = std::make_shared<std::atomic<bool>>(false);
  };
  void worker();
  void finish(const std::string& id, JobStatus status, JobOutput out, std::string error);
  void evict();

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::map<std::string, Entry> jobs_;
  std::deque<std::string> queue_;
  std::deque<std::string> finished_;
  int queue_limit_, retention_;
  std::filesystem::path artifact_dir_;
  uint64_t counter_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> threads_;
};

/// HTTP front end over a loaded model.
class Service {
 public:
  Service(ServiceConfig config, Model model);
  ~Service();

  /// Blocks serving on config.host:config.port.
  bool listen();
  /// Binds an ephemeral port and serves on a background thread.
  int start_background();
  void stop();

  JobTable& jobs() { return *jobs_; }
  httplib::Server& server() { return *server_; }

 private:
  void routes();
  LatentPair latent(const std::string& id) const;
  std::string store_latent(const LatentPair& z);
  LatentPair latent_from_json(const nlohmann::json& body, const std::string& field) const;
  std::vector<std::string> write_render(const Render& r, const std::filesystem::path& dir, const std::string& url_prefix,
                                        const std::string& stem) const;
  JobFn make_job(const std::string& kind, const nlohmann::json& payload);

  ServiceConfig config_;
  Model model_;
  std::filesystem::path artifacts_;
  std::unique_ptr<httplib::Server> server_;
  std::unique_ptr<JobTable> jobs_;
  mutable std::mutex latent_mu_;
  mutable std::map<std::string, LatentPair> latents_;
  std::atomic<uint64_t> latent_counter_{0};
  std::thread background_;
};

}  // namespace semfield
