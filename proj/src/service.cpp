#include "vdx/service.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include <httplib.h>

#include "vdx/intensity.hpp"
#include "vdx/mesh.hpp"

namespace vdx {

using nlohmann::json;

nlohmann::json ServiceError::body() const {
  json j{{"error", what()}, {"status", status_}};
  if (!fields_.is_null()) j["fields"] = fields_;
  return j;
}

const char* to_string(JobStatus s) {
  switch (s) {
    case JobStatus::pending: return "pending";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "?";
}

namespace {

ServiceError not_found(const std::string& what) { return ServiceError(404, what + " not found"); }

ServiceError invalid(const json& fields) {
  return ServiceError(422, "invalid parameters", fields);
}

std::optional<double> number_field(const json& body, const char* name, json& errors) {
  if (!body.contains(name)) return std::nullopt;
  const auto& v = body.at(name);
  if (!v.is_number() || !std::isfinite(v.get<double>())) {
    errors[name] = "must be a finite number";
    return std::nullopt;
  }
  return v.get<double>();
}

}  // namespace

Session::Session(ExecutionOptions exec) : exec_(exec) {}

Session::~Session() { wait_idle(); }

void Session::wait_idle() {
  std::vector<std::thread> done;
  {
    std::lock_guard lock(threads_mutex_);
    done.swap(workers_);
  }
  for (auto& t : done) t.join();
}

std::shared_ptr<const Session::Volume> Session::volume(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = volumes_.find(id);
  if (it == volumes_.end()) throw not_found("volume " + id);
  return it->second;
}

nlohmann::json Session::load_volume(const nlohmann::json& body) {
  if (!body.is_object() || !body.contains("path") || !body.at("path").is_string())
    throw invalid({{"path", "required string"}});
  const auto path = body.at("path").get<std::string>();
  std::shared_ptr<const DenseVolume> data;
  try {
    data = std::make_shared<const DenseVolume>(vdx::load_volume(path));
  } catch (const std::exception& e) {
    throw invalid({{"path", e.what()}});
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (float x : data->values())
    if (std::isfinite(x)) {
      lo = std::min<double>(lo, x);
      hi = std::max<double>(hi, x);
    }
  auto v = std::make_shared<Volume>();
  v->path = path;
  v->data = data;
  {
    std::unique_lock lock(mutex_);
    v->id = "v" + std::to_string(next_volume_++);
    volumes_[v->id] = v;
  }
  json range = lo <= hi ? json{lo, hi} : json(nullptr);
  return {{"volume_id", v->id},
          {"dims", data->dims()},
          {"origin", data->geometry().origin},
          {"spacing", data->geometry().spacing},
          {"axis_labels", data->axis_labels()},
          {"intensity_range", range}};
}

nlohmann::json Session::histogram(const std::string& volume_id, std::optional<std::size_t> bins) {
  const auto v = volume(volume_id);
  const std::size_t n = bins.value_or(kDefaultHistogramBins);
  if (n < 2) throw invalid({{"bins", "must be at least 2"}});
  Histogram h;
  try {
    h = vdx::histogram(*v->data, n);
  } catch (const DataError& e) {
    throw ServiceError(422, e.what());
  }
  json j = to_json(h);
  j["volume_id"] = volume_id;
  const auto cusp = detect_cusp(h);
  j["cusp"] = cusp ? json(*cusp) : json(nullptr);
  return j;
}

std::shared_ptr<const SparsePoints> Session::sparse_for(const Volume& v, double cutoff) {
  const auto key = std::make_pair(v.id, cutoff);
  {
    std::shared_lock lock(mutex_);
    if (auto it = sparse_cache_.find(key); it != sparse_cache_.end()) return it->second;
  }
  auto sparse = std::make_shared<const SparsePoints>(to_sparse(*v.data, cutoff));
  std::unique_lock lock(mutex_);
  return sparse_cache_.try_emplace(key, sparse).first->second;
}

nlohmann::json Session::submit_cluster(const std::string& volume_id, const nlohmann::json& body) {
  const auto v = volume(volume_id);
  if (!body.is_object()) throw invalid({{"body", "expected a JSON object"}});
  json errors = json::object();

  std::optional<double> cutoff;
  bool auto_cutoff = false;
  if (!body.contains("cutoff") || (body.at("cutoff").is_string() && body.at("cutoff") == "auto")) {
    auto_cutoff = true;
  } else {
    cutoff = number_field(body, "cutoff", errors);
  }
  ClusteringParams params;
  params.eps = number_field(body, "eps", errors).value_or(kDefaultEps);
  if (!body.contains("min_weight")) errors["min_weight"] = "required";
  params.min_weight = number_field(body, "min_weight", errors).value_or(0.0);
  if (body.contains("include_border")) {
    if (body.at("include_border").is_boolean()) params.include_border = body.at("include_border").get<bool>();
    else errors["include_border"] = "must be a boolean";
  }
  if (!errors.contains("eps") && !(params.eps > 0.0)) errors["eps"] = "must be positive";
  if (!errors.contains("min_weight") && !(params.min_weight > 0.0)) errors["min_weight"] = "must be positive";
  if (!errors.empty()) throw invalid(errors);

  if (auto_cutoff) {
    try {
      cutoff = detect_cusp(vdx::histogram(*v->data));
    } catch (const DataError&) {
    }
    if (!cutoff) throw invalid({{"cutoff", "no cusp detected in the histogram; supply a numeric cutoff"}});
  }

  const RunKey key{volume_id, *cutoff, params.eps, params.min_weight, params.include_border};
  std::shared_ptr<Run> run;
  {
    std::unique_lock lock(mutex_);
    if (auto it = run_by_key_.find(key); it != run_by_key_.end()) {
      const auto& job = jobs_.at(it->second);
      if (job.status == JobStatus::pending || job.status == JobStatus::running)
        throw ServiceError(409, "a run with these parameters is already in progress",
                           {{"run_id", job.id}});
      if (job.status == JobStatus::done)
        return {{"job_id", job.id}, {"run_id", job.id}, {"status", "done"}, {"cached", true},
                {"cutoff", *cutoff}};
      // A failed run keeps its record; a new submission gets a fresh job.
    }
    run = std::make_shared<Run>();
    run->id = "r" + std::to_string(next_job_++);
    run->volume_id = volume_id;
    run->cutoff = *cutoff;
    run->params = params;
    run->geometry = v->data->geometry();
    jobs_[run->id] = Job{run->id, JobStatus::pending, {}, 0.0, nullptr};
    run_by_key_[key] = run->id;
  }
  {
    std::lock_guard lock(threads_mutex_);
    workers_.emplace_back(&Session::execute, this, run->id, run);
  }
  return {{"job_id", run->id}, {"run_id", run->id}, {"status", "pending"}, {"cached", false},
          {"cutoff", *cutoff}};
}

void Session::execute(std::string job_id, std::shared_ptr<Run> run) {
  const auto start = std::chrono::steady_clock::now();
  {
    std::unique_lock lock(mutex_);
    jobs_.at(job_id).status = JobStatus::running;
  }
  try {
    const auto v = volume(run->volume_id);
    run->points = sparse_for(*v, run->cutoff);
    run->result = std::make_shared<const ClusterResult>(cluster(*run->points, run->params, exec_));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::unique_lock lock(mutex_);
    auto& job = jobs_.at(job_id);
    job.run = std::move(run);
    job.seconds = secs;
    job.status = JobStatus::done;
  } catch (const std::exception& e) {
    std::unique_lock lock(mutex_);
    auto& job = jobs_.at(job_id);
    job.error = e.what();
    job.status = JobStatus::failed;
  }
}

nlohmann::json Session::job(const std::string& job_id) const {
  std::shared_lock lock(mutex_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) throw not_found("job " + job_id);
  const auto& job = it->second;
  json j{{"job_id", job.id}, {"run_id", job.id}, {"status", to_string(job.status)}};
  if (job.status == JobStatus::failed) j["error"] = job.error;
  if (job.status == JobStatus::done) {
    const auto& r = *job.run;
    j["seconds"] = job.seconds;
    j["n_clusters"] = r.result->n_clusters;
    j["n_points"] = r.points->size();
    j["params"] = {{"volume_id", r.volume_id},
                   {"cutoff", r.cutoff},
                   {"eps", r.params.eps},
                   {"min_weight", r.params.min_weight},
                   {"include_border", r.params.include_border}};
  }
  return j;
}

std::shared_ptr<const Session::Run> Session::finished_run(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw not_found("run " + id);
  if (it->second.status != JobStatus::done)
    throw ServiceError(409, "run " + id + " is " + to_string(it->second.status),
                       {{"status", to_string(it->second.status)}});
  return it->second.run;
}

nlohmann::json Session::ranked_clusters(const std::string& run_id, const std::string& key) const {
  const auto run = finished_run(run_id);
  RankKey k;
  try {
    k = parse_rank_key(key);
  } catch (const DataError& e) {
    throw invalid({{"key", e.what()}});
  }
  auto list = json::array();
  for (const auto& s : rank_clusters(*run->result, *run->points, k)) list.push_back(to_json(s));
  return {{"run_id", run_id}, {"key", to_string(k)}, {"n_clusters", run->result->n_clusters},
          {"clusters", std::move(list)}};
}

namespace {

DecimateMode mode_param(const std::string& mode) {
  try {
    return parse_decimate_mode(mode);
  } catch (const DataError& e) {
    throw invalid({{"mode", e.what()}});
  }
}

Payload point_payload(const SparsePoints& members, std::size_t target, DecimateMode mode,
                      std::uint64_t seed, const Geometry& g) {
  if (target == 0) throw invalid({{"target", "must be at least 1"}});
  const auto positions = decimate_positions(members, target, mode, seed);
  return {"application/octet-stream", encode_point_cloud(make_point_cloud(members, positions, g))};
}

}  // namespace

Payload Session::cluster_points(const std::string& run_id, std::int32_t cluster_id,
                                std::size_t target, const std::string& mode,
                                std::uint64_t seed) const {
  const auto run = finished_run(run_id);
  if (cluster_id < 0 || cluster_id >= run->result->n_clusters)
    throw not_found("cluster " + std::to_string(cluster_id));
  const auto m = mode_param(mode);
  const auto members = select(*run->result, *run->points, {cluster_id});
  return point_payload(members, target, m, seed, run->geometry);
}

std::shared_ptr<const ShellResult> Session::shell_for(const Run& run, std::int32_t cluster_id,
                                                      int depth) {
  if (cluster_id < 0 || cluster_id >= run.result->n_clusters)
    throw not_found("cluster " + std::to_string(cluster_id));
  if (depth < 1) throw invalid({{"depth", "must be a positive integer"}});
  const auto key = std::make_tuple(run.id, cluster_id, depth);
  {
    std::shared_lock lock(mutex_);
    if (auto it = shells_.find(key); it != shells_.end()) return it->second;
  }
  std::shared_ptr<const ShellResult> s;
  try {
    s = std::make_shared<const ShellResult>(
        shell_extract(*run.points, run.params, cluster_id, depth, run.result.get(), exec_));
  } catch (const PeelExhaustedError& e) {
    throw invalid({{"depth", e.what()}});
  }
  std::unique_lock lock(mutex_);
  return shells_.try_emplace(key, s).first->second;
}

nlohmann::json Session::shell(const std::string& run_id, const nlohmann::json& body) {
  const auto run = finished_run(run_id);
  json errors = json::object();
  if (!body.is_object() || !body.contains("cluster_id") || !body.at("cluster_id").is_number_integer())
    errors["cluster_id"] = "required integer";
  int depth = 1;
  if (body.is_object() && body.contains("depth")) {
    if (body.at("depth").is_number_integer() && body.at("depth").get<int>() >= 1)
      depth = body.at("depth").get<int>();
    else
      errors["depth"] = "must be a positive integer";
  }
  if (!errors.empty()) throw invalid(errors);
  const auto s = shell_for(*run, body.at("cluster_id").get<std::int32_t>(), depth);
  json j = shell_stats_json(*s);
  j["run_id"] = run_id;
  return j;
}

Payload Session::shell_points(const std::string& run_id, std::int32_t cluster_id, int depth,
                              std::size_t target, const std::string& mode, std::uint64_t seed) {
  const auto run = finished_run(run_id);
  const auto m = mode_param(mode);
  const auto s = shell_for(*run, cluster_id, depth);
  return point_payload(s->shell, target, m, seed, run->geometry);
}

Payload Session::cluster_mesh(const std::string& run_id, std::int32_t cluster_id,
                              std::optional<double> iso) const {
  const auto run = finished_run(run_id);
  if (cluster_id < 0 || cluster_id >= run->result->n_clusters)
    throw not_found("cluster " + std::to_string(cluster_id));
  const auto grid = rasterize_cluster(*run->points, *run->result, cluster_id);
  if (!iso) {
    // Default: half the weakest member intensity, i.e. the membership boundary.
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < run->points->size(); ++p)
      if (run->result->labels[p] == cluster_id) lo = std::min(lo, run->points->points[p].intensity);
    iso = 0.5 * lo;
  }
  auto mesh = isosurface(grid, *iso);
  // Rasterized grids live in index space; map to the volume's geometry.
  for (auto& v : mesh.vertices)
    for (int a = 0; a < 3; ++a) v[a] = run->geometry.origin[a] + v[a] * run->geometry.spacing[a];
  return {"model/obj", encode_obj(mesh)};
}

// --- HTTP ----------------------------------------------------------------------------

Service::Service(Options options)
    : options_(std::move(options)),
      session_(std::make_unique<Session>(options_.exec)),
      server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

Service::~Service() {
  stop();
  session_->wait_idle();
}

namespace {

void send_json(httplib::Response& res, const json& j, int status = 200) {
  res.status = status;
  res.set_header(kFormatVersionHeader, "1");
  res.set_content(j.dump(), "application/json");
}

void send_payload(httplib::Response& res, const Payload& p) {
  res.status = 200;
  res.set_header(kFormatVersionHeader, "1");
  res.set_content(p.body, p.content_type);
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ServiceError(400, std::string("malformed JSON body: ") + e.what());
  }
}

template <typename T>
T query(const httplib::Request& req, const char* name, T fallback) {
  if (!req.has_param(name)) return fallback;
  const auto raw = req.get_param_value(name);
  try {
    std::size_t used = 0;
    T value;
    if constexpr (std::is_same_v<T, double>) value = std::stod(raw, &used);
    else if constexpr (std::is_signed_v<T>) value = static_cast<T>(std::stoll(raw, &used));
    else {
      if (!raw.empty() && raw[0] == '-') throw std::invalid_argument("negative");
      value = static_cast<T>(std::stoull(raw, &used));
    }
    if (used != raw.size()) throw std::invalid_argument("trailing characters");
    return value;
  } catch (const std::exception&) {
    throw invalid({{name, "could not parse '" + raw + "'"}});
  }
}

std::int32_t path_int(const std::string& raw, const char* what) {
  try {
    std::size_t used = 0;
    const long v = std::stol(raw, &used);
    if (used == raw.size()) return static_cast<std::int32_t>(v);
  } catch (const std::exception&) {
  }
  throw not_found(std::string(what) + " " + raw);
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const ServiceError& e) {
      send_json(res, e.body(), e.status());
    } catch (const DataError& e) {
      send_json(res, ServiceError(422, e.what()).body(), 422);
    } catch (const std::exception& e) {
      send_json(res, ServiceError(500, e.what()).body(), 500);
    }
  };
}

}  // namespace

void Service::install_routes() {
  auto& s = *server_;
  Session& ses = *session_;

  s.Post("/volumes", guarded([&ses](const httplib::Request& req, httplib::Response& res) {
           send_json(res, ses.load_volume(parse_body(req)), 201);
         }));
  s.Get(R"(/volumes/([^/]+)/histogram)",
        guarded([&ses](const httplib::Request& req, httplib::Response& res) {
          std::optional<std::size_t> bins;
          if (req.has_param("bins")) bins = query<std::size_t>(req, "bins", 0);
          send_json(res, ses.histogram(req.matches[1], bins));
        }));
  s.Post(R"(/volumes/([^/]+)/cluster)",
         guarded([&ses](const httplib::Request& req, httplib::Response& res) {
           auto j = ses.submit_cluster(req.matches[1], parse_body(req));
           send_json(res, j, j.at("cached").get<bool>() ? 200 : 202);
         }));
  s.Get(R"(/jobs/([^/]+))", guarded([&ses](const httplib::Request& req, httplib::Response& res) {
          send_json(res, ses.job(req.matches[1]));
        }));
  s.Get(R"(/runs/([^/]+)/clusters)",
        guarded([&ses](const httplib::Request& req, httplib::Response& res) {
          const std::string key = req.has_param("key") ? req.get_param_value("key") : "size";
          send_json(res, ses.ranked_clusters(req.matches[1], key));
        }));
  s.Get(R"(/runs/([^/]+)/clusters/([^/]+)/points)",
        guarded([&ses](const httplib::Request& req, httplib::Response& res) {
          const std::string mode = req.has_param("mode") ? req.get_param_value("mode") : "importance";
          send_payload(res, ses.cluster_points(req.matches[1], path_int(req.matches[2], "cluster"),
                                               query<std::size_t>(req, "target", 50000), mode,
                                               query<std::uint64_t>(req, "seed", 0)));
        }));
  s.Get(R"(/runs/([^/]+)/clusters/([^/]+)/mesh)",
        guarded([&ses](const httplib::Request& req, httplib::Response& res) {
          std::optional<double> iso;
          if (req.has_param("iso")) iso = query<double>(req, "iso", 0.0);
          send_payload(res, ses.cluster_mesh(req.matches[1], path_int(req.matches[2], "cluster"), iso));
        }));
  s.Post(R"(/runs/([^/]+)/shell)", guarded([&ses](const httplib::Request& req, httplib::Response& res) {
           send_json(res, ses.shell(req.matches[1], parse_body(req)));
         }));
  s.Get(R"(/runs/([^/]+)/shell/points)",
        guarded([&ses](const httplib::Request& req, httplib::Response& res) {
          if (!req.has_param("cluster_id")) throw invalid({{"cluster_id", "required"}});
          const std::string mode = req.has_param("mode") ? req.get_param_value("mode") : "importance";
          send_payload(res, ses.shell_points(req.matches[1], query<std::int32_t>(req, "cluster_id", 0),
                                             query<int>(req, "depth", 1),
                                             query<std::size_t>(req, "target", 50000), mode,
                                             query<std::uint64_t>(req, "seed", 0)));
        }));
  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_json(res, ServiceError(res.status, "no such route").body(), res.status);
  });
}

int Service::bind() {
  int port = options_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(options_.host);
  } else if (!server_->bind_to_port(options_.host, port)) {
    port = -1;
  }
  if (port < 0)
    throw std::runtime_error("cannot bind " + options_.host + ":" + std::to_string(options_.port));
  options_.port = port;
  return port;
}

void Service::run() { server_->listen_after_bind(); }

int Service::start() {
  const int port = bind();
  thread_ = std::thread([this] { run(); });
  server_->wait_until_ready();
  return port;
}

void Service::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace vdx
