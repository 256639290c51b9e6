#pragma once

// Local HTTP/JSON service for interactive parameter steering.
//
// Routes (JSON bodies unless noted):
//   POST /volumes                                {path}
//   GET  /volumes/{vid}/histogram?bins=N
//   POST /volumes/{vid}/cluster                  {cutoff, eps, min_weight, include_border}
//   GET  /jobs/{job_id}
//   GET  /runs/{run_id}/clusters?key=size|total_intensity|max_intensity
//   GET  /runs/{run_id}/clusters/{cid}/points?target=N&mode=stride|importance&seed=S
//                                                -> binary point cloud
//   POST /runs/{run_id}/shell                    {cluster_id, depth}
//   GET  /runs/{run_id}/shell/points?cluster_id=C&depth=D&target=N&mode=..&seed=S
//                                                -> binary point cloud
//   GET  /runs/{run_id}/clusters/{cid}/mesh?iso=X -> OBJ text
//
// A job id and the run id it produces are the same string.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "vdx/features.hpp"
#include "vdx/volume.hpp"
#include "vdx/wdbscan.hpp"

namespace httplib {
class Server;
}

namespace vdx {

inline constexpr const char* kServiceSchema = "vdx.service/1";
inline constexpr const char* kFormatVersionHeader = "X-VDX-Format-Version";

/// Error carrying an HTTP status and a JSON body.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& message, nlohmann::json fields = nullptr)
      : std::runtime_error(message), status_(status), fields_(std::move(fields)) {}
  int status() const noexcept { return status_; }
  nlohmann::json body() const;

 private:
  int status_;
  nlohmann::json fields_;
};

enum class JobStatus { pending, running, done, failed };
const char* to_string(JobStatus s);

/// Binary or text payload plus its content type.
struct Payload {
  std::string content_type;
  std::string body;
};

/// Session state behind the HTTP routes; usable directly in-process.
class Session {
 public:
  explicit Session(ExecutionOptions exec = {});
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  nlohmann::json load_volume(const nlohmann::json& body);
  nlohmann::json histogram(const std::string& volume_id, std::optional<std::size_t> bins);
  nlohmann::json submit_cluster(const std::string& volume_id, const nlohmann::json& body);
  nlohmann::json job(const std::string& job_id) const;
  nlohmann::json ranked_clusters(const std::string& run_id, const std::string& key) const;
  Payload cluster_points(const std::string& run_id, std::int32_t cluster_id, std::size_t target,
                         const std::string& mode, std::uint64_t seed) const;
  nlohmann::json shell(const std::string& run_id, const nlohmann::json& body);
  Payload shell_points(const std::string& run_id, std::int32_t cluster_id, int depth,
                       std::size_t target, const std::string& mode, std::uint64_t seed);
  Payload cluster_mesh(const std::string& run_id, std::int32_t cluster_id,
                       std::optional<double> iso) const;

  /// Blocks until every launched job has finished.
  void wait_idle();

 private:
  struct Volume {
    std::string id;
    std::string path;
    std::shared_ptr<const DenseVolume> data;
  };
  struct Run {
    std::string id;
    std::string volume_id;
    double cutoff = 0.0;
    ClusteringParams params;
    std::shared_ptr<const SparsePoints> points;
    std::shared_ptr<const ClusterResult> result;  // set once, on completion
    Geometry geometry;
  };
  struct Job {
    std::string id;
    JobStatus status = JobStatus::pending;
    std::string error;
    double seconds = 0.0;
    std::shared_ptr<const Run> run;  // published when status becomes done
  };
  using RunKey = std::tuple<std::string, double, double, double, bool>;

  std::shared_ptr<const Volume> volume(const std::string& id) const;
  std::shared_ptr<const Run> finished_run(const std::string& id) const;
  std::shared_ptr<const SparsePoints> sparse_for(const Volume& v, double cutoff);
  std::shared_ptr<const ShellResult> shell_for(const Run& run, std::int32_t cluster_id, int depth);
  void execute(std::string job_id, std::shared_ptr<Run> run);

  ExecutionOptions exec_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const Volume>> volumes_;
  std::map<std::pair<std::string, double>, std::shared_ptr<const SparsePoints>> sparse_cache_;
  std::map<RunKey, std::string> run_by_key_;
  std::map<std::string, Job> jobs_;
  std::map<std::tuple<std::string, std::int32_t, int>, std::shared_ptr<const ShellResult>> shells_;
  std::uint64_t next_volume_ = 1;
  std::uint64_t next_job_ = 1;

  std::mutex threads_mutex_;
  std::vector<std::thread> workers_;
};

/// HTTP front end. Binds to localhost unless told otherwise.
class Service {
 public:
  struct Options {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    ExecutionOptions exec;
  };

  explicit Service(Options options);
  ~Service();

  /// Binds the socket; returns the bound port.
  int bind();
  /// Serves until stop(). Call bind() first.
  void run();
  /// bind() + run() on a background thread; returns the port.
  int start();
  void stop();

  Session& session() noexcept { return *session_; }

 private:
  void install_routes();

  Options options_;
  std::unique_ptr<Session> session_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace vdx
