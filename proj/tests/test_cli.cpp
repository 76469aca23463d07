#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "calibra/calibra.hpp"

namespace fs = std::filesystem;
using namespace calibra;

namespace {

struct Run {
  int status = -1;
  std::string output;
};

Run run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(CALIBRA_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) r.output += buf.data();
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("calibra_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }

  void synth(const std::string& extra = "") {
    const auto r = run("synth --n 120 --prior 0.7 --seed 3 --out-dir " + dir.string() + " " + extra);
    ASSERT_EQ(r.status, 0) << r.output;
  }

  fs::path dir;
};

}  // namespace

TEST_F(CliTest, SynthIsDeterministicAndValidatesPrior) {
  synth();
  const auto first = slurp(dir / "probes.jsonl");
  synth();
  EXPECT_EQ(first, slurp(dir / "probes.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "samples.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "truths.jsonl"));
  EXPECT_NE(run("synth --prior 1.2 --out-dir " + dir.string()).status, 0);

  ASSERT_EQ(run("synth --n 10 --bias-model logit-additive --out-dir " + dir.string()).status, 0);
  const auto manifest = io::read_json(path("probes.jsonl.manifest.json"));
  EXPECT_EQ(manifest["config"]["bias_model"], "logit-additive");
  EXPECT_EQ(manifest["command"], "synth");
}

TEST_F(CliTest, CalibrateWritesCurveAndDiagnostics) {
  synth();
  auto r = run("calibrate --store " + path("probes.jsonl") + " --output " + path("curve.json"));
  ASSERT_EQ(r.status, 0) << r.output;
  const auto curve = isotonic::curve_from_json(io::read_json(path("curve.json")));
  EXPECT_EQ(curve.token(), "A");
  const auto diag = io::read_json(path("curve.json.diagnostics.json"));
  EXPECT_EQ(diag["stop_reason"], "epsilon");
  EXPECT_EQ(diag["objective"], "full");
  EXPECT_TRUE(fs::exists(path("curve.json.manifest.json")));

  r = run("calibrate --store " + path("probes.jsonl") + " --output " + path("tok.json") + " --objective swap-tokens");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(io::read_json(path("tok.json.diagnostics.json"))["objective"], "swap-tokens");

  for (const char* name : {"a.json", "b.json"}) {
    r = run("calibrate --store " + path("probes.jsonl") + " --fraction 0.1 --seed 7 --output " + path(name));
    ASSERT_EQ(r.status, 0) << r.output;
  }
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
  EXPECT_EQ(isotonic::curve_from_json(io::read_json(path("a.json"))).meta().estimation_size, 12u);

  EXPECT_NE(run("calibrate --store " + path("probes.jsonl") + " --output " + path("c.json") + " --objective nope").status, 0);
}

TEST_F(CliTest, ApplyAndReport) {
  synth();
  ASSERT_EQ(run("calibrate --store " + path("probes.jsonl") + " --output " + path("curve.json")).status, 0);
  auto r = run("apply --probes " + path("probes.jsonl") + " --curve " + path("curve.json") + " --output " +
               path("verdicts.jsonl"));
  ASSERT_EQ(r.status, 0) << r.output;
  const auto rows = pipeline::load_verdicts(path("verdicts.jsonl"));
  EXPECT_EQ(rows.size(), 2u * 3u * 120u);
  for (const auto& row : rows) {
    EXPECT_GE(row.calibrated_p_t1, 0.0);
    EXPECT_LE(row.calibrated_p_t1, 1.0);
  }

  r = run("apply --probes " + path("probes.jsonl") + " --methods pride --output " + path("pride.jsonl"));
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("--estimation"), std::string::npos) << r.output;

  r = run("apply --probes " + path("probes.jsonl") + " --methods raw,pride,calibraeval --estimation " +
          path("probes.jsonl") + " --curve " + path("curve.json") + " --output " + path("all.jsonl"));
  ASSERT_EQ(r.status, 0) << r.output;

  r = run("report --verdicts " + path("all.jsonl") + " --labels " + path("samples.jsonl") + " --output " +
          path("report.json"));
  ASSERT_EQ(r.status, 0) << r.output;
  const auto report = io::read_json(path("report.json"));
  ASSERT_TRUE(report.is_array() || report.contains("reports")) << report.dump();
  const auto& list = report.is_array() ? report : report["reports"];
  ASSERT_EQ(list.size(), 3u);
  for (const auto& m : list) {
    for (const char* key : {"kappa", "icc_2k", "icc_3k", "rstd", "accuracy"}) EXPECT_TRUE(m[key].is_number()) << key;
  }
  const auto table = slurp(dir / "report.json.txt");
  EXPECT_NE(table.find("calibraeval"), std::string::npos);
  EXPECT_NE(r.output.find("pride"), std::string::npos);

  r = run("report --verdicts " + path("all.jsonl") + " --output " + path("unlabeled.json") + " --icc-mode standard");
  ASSERT_EQ(r.status, 0) << r.output;
  const auto unlabeled = io::read_json(path("unlabeled.json"));
  const auto& ul = unlabeled.is_array() ? unlabeled : unlabeled["reports"];
  EXPECT_TRUE(ul[0]["rstd"].is_null());
  EXPECT_EQ(ul[0]["icc_mode"], "standard");

  io::write_text(path("bad.jsonl"), "{\"sample_id\": 3}\n");
  EXPECT_NE(run("report --verdicts " + path("bad.jsonl")).status, 0);
}

TEST_F(CliTest, ProbeAgainstLocalServer) {
  io::write_text(path("s.jsonl"),
                 R"({"id":"q1","instruction":"2+2?","content_1":"4","content_2":"5","gold_label":"first","category":null})"
                 "\n"
                 R"({"id":"q2","instruction":"3+3?","content_1":"7","content_2":"6","gold_label":"second","category":null})"
                 "\n");

  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    const auto body = nlohmann::json::parse(req.body);
    const std::string user = body["messages"].back()["content"];
    // Answer with the label of the first slot.
    const auto open = user.find("[Answer ") + 8;
    const auto label = user.substr(open, user.find(']', open) - open);
    nlohmann::json top = nlohmann::json::array({{{"token", label}, {"logprob", -0.3}}});
    for (const char* other : {"Alice", "Bob"}) {
      if (label != other) top.push_back({{"token", other}, {"logprob", -1.5}});
    }
    nlohmann::json resp;
    resp["choices"] = nlohmann::json::array(
        {{{"logprobs", {{"content", nlohmann::json::array({{{"token", label}, {"logprob", -0.3}, {"top_logprobs", top}}})}}}}});
    res.set_content(resp.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  const std::string env = "CALIBRA_ENDPOINT=http://127.0.0.1:" + std::to_string(port) + "/v1";

  const std::string args = "probe --input " + path("s.jsonl") + " --output " + path("store.jsonl") +
                           " --model fake --tokens Alice,Bob --combinations x0,x1,x2";
  auto r = run(args, "CALIBRA_API_KEY= " + env);
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("CALIBRA_API_KEY"), std::string::npos) << r.output;

  r = run(args, "CALIBRA_API_KEY=k " + env);
  ASSERT_EQ(r.status, 0) << r.output;
  const auto records = load_probes(path("store.jsonl"));
  ASSERT_EQ(records.size(), 6u);
  for (const auto& rec : records) {
    EXPECT_EQ(rec.token_pair, TokenPair("Alice", "Bob"));
    EXPECT_NEAR(rec.normalized.p_t1 + rec.normalized.p_t2, 1.0, 1e-12);
  }
  EXPECT_EQ(hits.load(), 6);
  const auto before = slurp(dir / "store.jsonl");

  r = run(args, "CALIBRA_API_KEY=k " + env);
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(hits.load(), 6);
  EXPECT_EQ(slurp(dir / "store.jsonl"), before);

  server.stop();
  t.join();
}
