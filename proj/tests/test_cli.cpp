#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

#include <json.hpp>

#include "tokrec/tokrec.hpp"

namespace {

struct CliResult {
  int code = -1;
  std::string out;  // stdout + stderr interleaved
};

const char* cli_binary() {
  const char* bin = std::getenv("TOKREC_CLI");
  if (!bin) ADD_FAILURE() << "TOKREC_CLI not set; run through ctest";
  return bin ? bin : "false";
}

CliResult run_cli(const std::string& args) {
  CliResult res;
  std::string cmd = std::string(cli_binary()) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    ADD_FAILURE() << "popen failed for: " << cmd;
    return res;
  }
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) res.out += buf;
  int status = pclose(pipe);
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::string first_line(const std::string& text) {
  return text.substr(0, text.find('\n'));
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  EXPECT_TRUE(in.good()) << path;
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void strip_timing(nlohmann::json& j) {
  if (j.is_object()) {
    j.erase("timing");
    for (auto it = j.begin(); it != j.end(); ++it) strip_timing(it.value());
  } else if (j.is_array()) {
    for (auto& v : j) strip_timing(v);
  }
}

// one workspace with a trained model, shared by every test in the suite
class cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    char tmpl[] = "/tmp/tokrec_cli_XXXXXX";
    ASSERT_NE(mkdtemp(tmpl), nullptr);
    dir_ = tmpl;
    std::ofstream corpus(dir_ + "/corpus.txt");
    corpus << "@category repetitive\n"
              "the cat sat on the mat . the cat sat on the mat . the cat sat on the mat .\n\n"
              "@category repetitive\n"
              "the dog sat on the rug . the dog sat on the rug . the dog sat on the rug .\n\n"
              "@category fresh\n"
              "a bird flew over the tall tree and a fish swam under the old bridge .\n";
    corpus.close();
    CliResult train = run_cli("train-ngram --corpus " + dir_ + "/corpus.txt --order 3" +
                              " --alpha 0.05 --vocab-cap 64 --out " + dir_ + "/model.trng");
    ASSERT_EQ(train.code, 0) << train.out;
    ASSERT_NE(train.out.find("trained"), std::string::npos);
  }

  static std::string dir_;
  static std::string model() { return dir_ + "/model.trng"; }
};

std::string cli::dir_;

TEST_F(cli, decode_methods_agree_at_greedy) {
  std::string common = " --model " + model() + " --prompt \"the cat sat\" --max-new-tokens 24";
  CliResult ar = run_cli("decode --method ar" + common);
  CliResult tr = run_cli("decode --method tr" + common);
  CliResult pld = run_cli("decode --method pld" + common);
  ASSERT_EQ(ar.code, 0) << ar.out;
  ASSERT_EQ(tr.code, 0) << tr.out;
  ASSERT_EQ(pld.code, 0) << pld.out;
  EXPECT_FALSE(first_line(ar.out).empty());
  EXPECT_EQ(first_line(ar.out), first_line(tr.out));
  EXPECT_EQ(first_line(ar.out), first_line(pld.out));
  EXPECT_NE(tr.out.find("method=tr"), std::string::npos);
}

TEST_F(cli, bench_report_is_stable_modulo_timing) {
  std::string cmd = "bench --model " + model() + " --corpus " + dir_ +
                    "/corpus.txt --methods ar,tr,pld --prompt-tokens 6 --max-new-tokens 32" +
                    " --out " + dir_ + "/bench_";
  CliResult a = run_cli(cmd + "a.json");
  CliResult b = run_cli(cmd + "b.json");
  ASSERT_EQ(a.code, 0) << a.out;
  ASSERT_EQ(b.code, 0) << b.out;
  nlohmann::json ja = nlohmann::json::parse(slurp(dir_ + "/bench_a.json"));
  nlohmann::json jb = nlohmann::json::parse(slurp(dir_ + "/bench_b.json"));
  EXPECT_TRUE(ja["losslessness"]["identical_outputs"].get<bool>());
  EXPECT_EQ(ja["cases"].size(), 3u);
  strip_timing(ja);
  strip_timing(jb);
  EXPECT_EQ(ja.dump(2), jb.dump(2));
}

TEST_F(cli, bench_csv_format) {
  CliResult r = run_cli("bench --model " + model() + " --corpus " + dir_ +
                        "/corpus.txt --methods ar,tr --prompt-tokens 6 --max-new-tokens 16" +
                        " --format csv");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("case,category,method"), std::string::npos);
  EXPECT_NE(r.out.find("repetitive-00,repetitive,tr,"), std::string::npos);
}

TEST_F(cli, matrix_save_export_inspect) {
  CliResult dec = run_cli("decode --method tr --model " + model() +
                          " --prompt \"the cat\" --max-new-tokens 32 --save-matrix " + dir_ +
                          "/warm.trmx");
  ASSERT_EQ(dec.code, 0) << dec.out;
  CliResult copy = run_cli("matrix export --in " + dir_ + "/warm.trmx --out " + dir_ +
                           "/copy.trmx");
  ASSERT_EQ(copy.code, 0) << copy.out;
  EXPECT_EQ(slurp(dir_ + "/warm.trmx"), slurp(dir_ + "/copy.trmx"));

  CliResult inspect =
      run_cli("matrix inspect --in " + dir_ + "/warm.trmx --model " + model() + " the");
  ASSERT_EQ(inspect.code, 0) << inspect.out;
  EXPECT_NE(inspect.out.find("(the)"), std::string::npos);
  EXPECT_NE(inspect.out.find("rank 0:"), std::string::npos);

  // a warm matrix must round-trip into --init hot: and still match ar output
  std::string common = " --model " + model() + " --prompt \"the dog sat\" --max-new-tokens 24";
  CliResult hot = run_cli("decode --method tr --init hot:" + dir_ + "/warm.trmx" + common);
  CliResult ar = run_cli("decode --method ar" + common);
  ASSERT_EQ(hot.code, 0) << hot.out;
  EXPECT_EQ(first_line(hot.out), first_line(ar.out));
}

TEST_F(cli, calibrate_tree_emits_valid_tree) {
  CliResult cal = run_cli("calibrate-tree --model " + model() + " --corpus " + dir_ +
                          "/corpus.txt --branch 3 --depth 3 --target 8 --prune-step 2" +
                          " --prompt-tokens 4 --max-new-tokens 16 --out " + dir_ + "/cal.tree");
  ASSERT_EQ(cal.code, 0) << cal.out;
  tokrec::TreeSpec spec = tokrec::load_tree(dir_ + "/cal.tree");
  EXPECT_NO_THROW(tokrec::validate_tree(spec, 3));
  EXPECT_LE(spec.nodes.size(), 8u);
  EXPECT_GE(spec.nodes.size(), 4u);  // root plus the seeded rank-0 spine

  CliResult dec = run_cli("decode --method tr --model " + model() + " --k 3 --tree " + dir_ +
                          "/cal.tree --prompt \"the cat\" --max-new-tokens 16");
  EXPECT_EQ(dec.code, 0) << dec.out;
}

TEST_F(cli, sweep_reports_grid) {
  CliResult r = run_cli("sweep --model " + model() + " --corpus " + dir_ +
                        "/corpus.txt --breadths 6,12 --depths 2 --prompt-tokens 6" +
                        " --max-new-tokens 16 --out " + dir_ + "/sweep.json");
  ASSERT_EQ(r.code, 0) << r.out;
  nlohmann::json j = nlohmann::json::parse(slurp(dir_ + "/sweep.json"));
  EXPECT_EQ(j["kind"], "sweep");
  ASSERT_EQ(j["grid"].size(), 3u);
  EXPECT_EQ(j["grid"][0]["kind"], "breadth");
  EXPECT_EQ(j["grid"][2]["kind"], "depth");
}

TEST_F(cli, exit_codes_follow_error_class) {
  EXPECT_EQ(run_cli("--help").code, 0);
  EXPECT_EQ(run_cli("decode --help").code, 0);
  // usage problems -> 2
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("decode --no-such-flag").code, 2);
  EXPECT_EQ(run_cli("frobnicate").code, 2);
  CliResult bad_init = run_cli("decode --model " + model() +
                               " --prompt \"the cat\" --init bogus");
  EXPECT_EQ(bad_init.code, 2);
  EXPECT_NE(bad_init.out.find("error:"), std::string::npos);
  CliResult bad_method = run_cli("decode --model " + model() +
                                 " --prompt \"the cat\" --method warp");
  EXPECT_EQ(bad_method.code, 2);
  // environment problems (missing files) -> 1
  EXPECT_EQ(run_cli("decode --model /no/such/model.trng --prompt \"the cat\"").code, 1);
  EXPECT_EQ(run_cli("matrix export --in /no/such.trmx --out /tmp/x.trmx").code, 1);
}

}  // namespace
