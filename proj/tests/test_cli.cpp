#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "fhn/noise.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "fhn_test_cli";

int run(const std::string& args) {
  const std::string cmd = std::string(FHN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json summary(const fs::path& dir, const std::string& cmd) { return json::parse(slurp(dir / (cmd + ".json"))); }

fs::path dir(const std::string& name) {
  const auto p = kRoot / name;
  fs::remove_all(p);
  return p;
}

const std::string kSmall = " --N 8 --eps 0.25 --steps 8 --dt 1/1024";

}  // namespace

TEST(Cli, HelpExitsZero) { EXPECT_EQ(run("--help"), 0); }

TEST(Cli, MissingSubcommandIsUsageError) { EXPECT_EQ(run(""), 1); }

TEST(Cli, MissingRequiredKeyIsUsageError) {
  const auto out = dir("missing");
  EXPECT_EQ(run("simulate --out-dir " + out.string()), 1);
}

TEST(Cli, UnknownFlagIsUsageError) { EXPECT_EQ(run("simulate --eps 0.25 --bogus 3"), 1); }

TEST(Cli, UnknownConfigKeyIsUsageError) {
  const auto out = dir("unknown_key");
  fs::create_directories(out);
  std::ofstream(out / "c.cfg") << "eps = 0.25\nbogus = 1\n";
  EXPECT_EQ(run("simulate --config " + (out / "c.cfg").string() + " --out-dir " + out.string()), 1);
}

TEST(Cli, MalformedValueIsUsageError) {
  const auto out = dir("malformed");
  EXPECT_EQ(run("simulate --eps abc --out-dir " + out.string()), 1);
}

TEST(Cli, FlagOverridesConfigFileAndProvenanceIsWritten) {
  const auto out = dir("override");
  fs::create_directories(out);
  std::ofstream(out / "c.cfg") << "# test\nN = 8\neps = 0.25\nsteps = 4\ndt = 1/1024\n";
  ASSERT_EQ(run("simulate --config " + (out / "c.cfg").string() + " --steps 2 --out-dir " + out.string()), 0);
  const auto prov = slurp(out / "simulate.config");
  EXPECT_NE(prov.find("steps = 2\n"), std::string::npos);
  EXPECT_NE(prov.find("N = 8\n"), std::string::npos);
  const auto s = summary(out, "simulate");
  EXPECT_EQ(s["command"], "simulate");
  EXPECT_TRUE(s.contains("config_hash"));
  EXPECT_TRUE(s.contains("pass_fail"));
  EXPECT_TRUE(s.contains("metrics"));
  // the provenance file is itself a valid config and reproduces the hash
  const auto again = dir("override_again");
  ASSERT_EQ(run("simulate --config " + (out / "simulate.config").string() + " --out-dir " + again.string()), 0);
  EXPECT_EQ(summary(again, "simulate")["config_hash"], s["config_hash"]);
}

TEST(Cli, SimulateIsDeterministicForFixedSeed) {
  const auto a = dir("det_a"), b = dir("det_b"), c = dir("det_c");
  ASSERT_EQ(run("simulate" + kSmall + " --seed 7 --out-dir " + a.string()), 0);
  ASSERT_EQ(run("simulate" + kSmall + " --seed 7 --workers 3 --out-dir " + b.string()), 0);
  ASSERT_EQ(run("simulate" + kSmall + " --seed 8 --out-dir " + c.string()), 0);
  EXPECT_EQ(slurp(a / "simulate.csv"), slurp(b / "simulate.csv"));
  EXPECT_EQ(summary(a, "simulate")["config_hash"], summary(b, "simulate")["config_hash"]);
  EXPECT_NE(slurp(a / "simulate.csv"), slurp(c / "simulate.csv"));
  EXPECT_NE(summary(a, "simulate")["config_hash"], summary(c, "simulate")["config_hash"]);
}

TEST(Cli, RenormToggleChangesOnlyRenormKey) {
  const auto a = dir("toggle_on"), b = dir("toggle_off");
  ASSERT_EQ(run("simulate" + kSmall + " --renorm lattice --out-dir " + a.string()), 0);
  ASSERT_EQ(run("simulate" + kSmall + " --renorm off --out-dir " + b.string()), 0);
  auto body = [](const fs::path& p) {
    std::istringstream is(slurp(p));
    std::string line, out;
    while (std::getline(is, line))
      if (line.rfind("#", 0) != 0 && line.rfind("out_dir", 0) != 0 && line.rfind("renorm", 0) != 0) out += line + "\n";
    return out;
  };
  EXPECT_EQ(body(a / "simulate.config"), body(b / "simulate.config"));
  EXPECT_NE(slurp(a / "simulate.csv"), slurp(b / "simulate.csv"));
}

TEST(Cli, SnapshotDumpsAreReadable) {
  const auto out = dir("snap");
  ASSERT_EQ(run("simulate" + kSmall + " --snapshot_every 4 --out-dir " + out.string()), 0);
  fhn::FieldDumpHeader h;
  const auto u = fhn::read_field_dump((out / "snapshots" / "u_000004.bin").string(), h);
  EXPECT_EQ(h.d, 3);
  EXPECT_EQ(h.N, 8);
  EXPECT_EQ(h.n_steps, 4);
  EXPECT_EQ(u.size(), 512u);
  EXPECT_TRUE(fs::exists(out / "snapshots" / "v_000008.bin"));
}

TEST(Cli, BlowUpExitsThree) {
  const auto out = dir("blowup");
  EXPECT_EQ(run("simulate --N 8 --eps 0.25 --steps 256 --gamma1 1 --u0 cos --u0_amplitude 10 --noise false "
                "--renorm off --out-dir " + out.string()),
            3);
  const auto s = summary(out, "simulate");
  EXPECT_EQ(s["pass_fail"], "FAIL");
}

TEST(Cli, ConvergeRejectsTooFewHalvings) {
  const auto out = dir("halvings");
  EXPECT_EQ(run("converge" + kSmall + " --eps_halvings 0 --out-dir " + out.string()), 1);
  EXPECT_TRUE(fs::exists(out / "converge.config"));
}

TEST(Cli, ConstantsSingleEpsHasNoFit) {
  const auto out = dir("const1");
  ASSERT_EQ(run("constants --eps_list 0.25 --modes continuum --out-dir " + out.string()), 0);
  const auto s = summary(out, "constants");
  EXPECT_EQ(s["pass_fail"], "NA");
  EXPECT_FALSE(s["metrics"].contains("c1_power_fit"));
  const auto csv = slurp(out / "constants.csv");
  // standard FHN: only c1 is non-zero
  EXPECT_NE(csv.find(",continuum,"), std::string::npos);
  EXPECT_NE(csv.find(",0,"), std::string::npos);
  EXPECT_EQ(csv.find("-0,"), std::string::npos);
}

TEST(Cli, ObjectsSingleRealisationReportsNoStandardError) {
  const auto out = dir("obj1");
  ASSERT_EQ(run("objects --realisations 1 --N 8 --eps 0.25 --steps 16 --out-dir " + out.string()), 0);
  EXPECT_NE(slurp(out / "objects.csv").find("n/a"), std::string::npos);
  EXPECT_EQ(summary(out, "objects")["pass_fail"], "NA");
}

TEST(Cli, KernelVerifyNegativeControlFails) {
  const auto good = dir("kv_good"), bad = dir("kv_bad");
  ASSERT_EQ(run("kernel-verify --n_max 2 --out-dir " + good.string()), 0);
  EXPECT_EQ(summary(good, "kernel-verify")["pass_fail"], "PASS");
  run("kernel-verify --n_max 2 --debug_corrupt_shift true --out-dir " + bad.string());
  EXPECT_EQ(summary(bad, "kernel-verify")["pass_fail"], "FAIL");
}

TEST(Cli, KernelVerifyRefusesLevelsAboveCeiling) {
  const auto out = dir("kv_ceiling");
  EXPECT_EQ(run("kernel-verify --n_max 9 --out-dir " + out.string()), 1);
}
