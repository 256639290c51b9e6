#include <doctest.h>

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "vdx/mesh.hpp"
#include "vdx/service.hpp"
#include "vdx/synth.hpp"

using namespace vdx;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  SynthResult blobs = synth_two_blobs({48, 32, 32}, 8, 5, 1.0, 0.01, 3);
  fs::path path;
  Service service{Service::Options{"127.0.0.1", 0, {}}};
  int port = 0;

  Fixture() {
    const auto dir = fs::temp_directory_path() / "vdx_test_service";
    fs::create_directories(dir);
    path = dir / "two_blobs.vvol";
    save_volume(blobs.volume, path);
    port = service.start();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }
};

json body_of(const httplib::Result& r) {
  REQUIRE(r);
  return json::parse(r->body);
}

json post(httplib::Client& c, const std::string& url, const json& body) {
  return body_of(c.Post(url, body.dump(), "application/json"));
}

json wait_done(httplib::Client& c, const std::string& job) {
  for (int attempt = 0; attempt < 6000; ++attempt) {
    auto j = body_of(c.Get("/jobs/" + job));
    if (j["status"] == "done" || j["status"] == "failed") return j;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  FAIL("job did not finish");
  return {};
}

std::vector<VoxelIndex> truth_of(const GroundTruth& t, std::int32_t label) {
  std::vector<VoxelIndex> out;
  for (const auto& v : t.signal_voxels())
    if (t.at(v.i, v.j, v.k) == label) out.push_back(v);
  return out;
}

}  // namespace

TEST_CASE("full loop on the two-blob fixture") {
  Fixture fx;
  auto c = fx.client();

  const auto load = c.Post("/volumes", json{{"path", fx.path.string()}}.dump(), "application/json");
  REQUIRE(load);
  CHECK(load->status == 201);
  CHECK(load->get_header_value(kFormatVersionHeader) == "1");
  const auto vol = json::parse(load->body);
  CHECK(vol["dims"] == json{48, 32, 32});
  CHECK(vol["intensity_range"][1] == 1.0);
  const std::string vid = vol["volume_id"];

  const auto hist = body_of(c.Get("/volumes/" + vid + "/histogram?bins=64"));
  CHECK(hist["counts"].size() == 64);
  CHECK(hist["edges"].size() == 65);
  REQUIRE(hist["cusp"].is_number());
  CHECK(hist["cusp"].get<double>() > 0.01);
  CHECK(hist["cusp"].get<double>() < 1.0);

  const auto submit = c.Post("/volumes/" + vid + "/cluster",
                             json{{"cutoff", "auto"}, {"eps", 1.7}, {"min_weight", 3}}.dump(),
                             "application/json");
  REQUIRE(submit);
  CHECK(submit->status == 202);
  const auto sub = json::parse(submit->body);
  const std::string run = sub["run_id"];
  CHECK(sub["job_id"] == run);
  const auto job = wait_done(c, run);
  REQUIRE(job["status"] == "done");
  CHECK(job["n_clusters"] == 2);

  SUBCASE("identical parameters return the cached run") {
    const auto again = c.Post("/volumes/" + vid + "/cluster",
                              json{{"cutoff", "auto"}, {"eps", 1.7}, {"min_weight", 3}}.dump(),
                              "application/json");
    REQUIRE(again);
    CHECK(again->status == 200);
    const auto j = json::parse(again->body);
    CHECK(j["run_id"] == run);
    CHECK(j["cached"] == true);
  }

  const auto ranked = body_of(c.Get("/runs/" + run + "/clusters?key=size"));
  REQUIRE(ranked["clusters"].size() == 2);
  const auto big = truth_of(fx.blobs.truth, 1);
  CHECK(ranked["clusters"][0]["size"] == big.size());
  CHECK(ranked["clusters"][1]["size"] == truth_of(fx.blobs.truth, 2).size());
  const int top = ranked["clusters"][0]["id"];

  SUBCASE("points of the top cluster equal the larger blob") {
    const auto r = c.Get("/runs/" + run + "/clusters/" + std::to_string(top) + "/points?target=1000000");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(r->get_header_value("Content-Type") == "application/octet-stream");
    CHECK(r->get_header_value(kFormatVersionHeader) == "1");
    CHECK(std::stoul(r->get_header_value("Content-Length")) == r->body.size());
    std::stringstream in(r->body);
    const auto pc = read_point_cloud(in);
    REQUIRE(pc.size() == big.size());
    for (std::size_t p = 0; p < big.size(); ++p)
      CHECK(pc.positions[p] == std::array<float, 3>{float(big[p].i), float(big[p].j), float(big[p].k)});
  }

  SUBCASE("decimated points respect the target and are immutable") {
    const std::string url = "/runs/" + run + "/clusters/" + std::to_string(top) + "/points?target=100&seed=4";
    const auto a = c.Get(url), b = c.Get(url);
    REQUIRE(a);
    REQUIRE(b);
    CHECK(a->body == b->body);
    std::stringstream in(a->body);
    CHECK(read_point_cloud(in).size() == 100);
    const auto s = c.Get("/runs/" + run + "/clusters/" + std::to_string(top) + "/points?target=100&mode=stride");
    std::stringstream in2(s->body);
    CHECK(read_point_cloud(in2).size() <= 100);
  }

  SUBCASE("shell stats and geometry") {
    const auto sh = post(c, "/runs/" + run + "/shell", {{"cluster_id", top}, {"depth", 1}});
    CHECK(sh["size"] == big.size());
    CHECK(sh["shell_size"].get<std::size_t>() + sh["interior_size"].get<std::size_t>() == big.size());
    CHECK(sh["empty_shell"] == true);  // min_weight 3: every member is core
    const auto deep = c.Post("/runs/" + run + "/shell", json{{"cluster_id", top}, {"depth", 0}}.dump(),
                             "application/json");
    CHECK(deep->status == 422);
    CHECK(json::parse(deep->body)["fields"].contains("depth"));
    const auto pts = c.Get("/runs/" + run + "/shell/points?cluster_id=" + std::to_string(top) + "&depth=1");
    REQUIRE(pts);
    CHECK(pts->status == 200);
    std::stringstream in(pts->body);
    CHECK(read_point_cloud(in).size() == sh["shell_size"].get<std::size_t>());
  }

  SUBCASE("mesh of the top cluster is closed") {
    const auto r = c.Get("/runs/" + run + "/clusters/" + std::to_string(top) + "/mesh");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(r->get_header_value("Content-Type") == "model/obj");
    std::stringstream in(r->body);
    const auto m = read_obj(in);
    CHECK_FALSE(m.empty());
    CHECK(m.watertight());
  }

  SUBCASE("errors") {
    CHECK(c.Get("/volumes/v404/histogram")->status == 404);
    CHECK(c.Get("/jobs/r404")->status == 404);
    CHECK(c.Get("/runs/r404/clusters")->status == 404);
    CHECK(c.Get("/runs/" + run + "/clusters/9/points")->status == 404);
    CHECK(c.Get("/runs/" + run + "/clusters/x/mesh")->status == 404);
    CHECK(c.Get("/runs/" + run + "/clusters?key=weight")->status == 422);
    CHECK(c.Get("/runs/" + run + "/clusters/0/points?target=abc")->status == 422);
    CHECK(c.Get("/runs/" + run + "/clusters/0/points?mode=random")->status == 422);
    CHECK(c.Get("/nowhere")->status == 404);

    const auto bad = c.Post("/volumes/" + vid + "/cluster", json{{"eps", -1}}.dump(), "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 422);
    const auto fields = json::parse(bad->body)["fields"];
    CHECK(fields.contains("eps"));
    CHECK(fields.contains("min_weight"));

    CHECK(c.Post("/volumes", "{not json", "application/json")->status == 400);
    CHECK(c.Post("/volumes", "{}", "application/json")->status == 422);
    CHECK(c.Post("/volumes", json{{"path", "/nonexistent.vvol"}}.dump(), "application/json")->status == 422);
  }
}

TEST_CASE("a run in flight rejects an identical submission and readers wait for completion") {
  SolidSpec spec;
  spec.dims = {128, 128, 128};
  spec.radius = 40;
  spec.noise = 0.1;
  const auto big = synth_solid(spec, 1);
  const auto dir = fs::temp_directory_path() / "vdx_test_service";
  fs::create_directories(dir);
  const auto path = dir / "big.vvol";
  save_volume(big.volume, path);

  Session session(ExecutionOptions{1});
  const std::string vid = session.load_volume({{"path", path.string()}})["volume_id"];
  // Cutoff 0 keeps every voxel, so the run takes long enough to overlap.
  const json params{{"cutoff", 0.0}, {"eps", 1.7}, {"min_weight", 5.0}};
  const auto first = session.submit_cluster(vid, params);
  CHECK(first["status"] == "pending");
  bool saw_conflict = false;
  try {
    session.submit_cluster(vid, params);
  } catch (const ServiceError& e) {
    saw_conflict = e.status() == 409;
  }
  const auto status = session.job(first["job_id"])["status"];
  if (status == "pending" || status == "running") {
    CHECK_THROWS_AS(session.ranked_clusters(first["run_id"], "size"), ServiceError);
  }
  session.wait_idle();
  CHECK(saw_conflict);
  CHECK(session.job(first["job_id"])["status"] == "done");
  const auto cached = session.submit_cluster(vid, params);
  CHECK(cached["cached"] == true);
  CHECK(cached["run_id"] == first["run_id"]);
  // A different tuple is an independent run.
  json other = params;
  other["min_weight"] = 6.0;
  CHECK(session.submit_cluster(vid, other)["run_id"] != first["run_id"]);
  session.wait_idle();
}

TEST_CASE("a histogram without a cusp makes auto cutoff a field error") {
  // Bin populations falling steadily with intensity: no valley anywhere.
  std::vector<float> vals;
  for (int b = 0; b < 256; ++b)
    for (int r = 0; r < 300 - b; ++r) vals.push_back(static_cast<float>(std::pow(10.0, -6.0 + 6.0 * (b + 0.5) / 256)));
  vals.resize(36 * 36 * 36, std::numeric_limits<float>::quiet_NaN());
  DenseVolume v({36, 36, 36}, std::move(vals));
  const auto dir = fs::temp_directory_path() / "vdx_test_service";
  fs::create_directories(dir);
  save_volume(v, dir / "nocusp.vvol");
  Session s;
  const std::string vid = s.load_volume({{"path", (dir / "nocusp.vvol").string()}})["volume_id"];
  try {
    s.submit_cluster(vid, {{"min_weight", 1.0}});
    FAIL("expected an error");
  } catch (const ServiceError& e) {
    CHECK(e.status() == 422);
    CHECK(e.body()["fields"].contains("cutoff"));
  }
}
