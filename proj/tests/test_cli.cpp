// End-to-end checks of the command-line tool: exit codes, file outputs and
// rerun determinism. The binary path arrives via the SPARSECOT_CLI
// environment variable set by CMake.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
    const char *env = std::getenv("SPARSECOT_CLI");
    REQUIRE(env != nullptr);
    return env;
}

int run(const std::string &args) {
    const std::string cmd = cli_path() + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// CSV text with the wall_ns column blanked, for determinism comparisons.
std::string strip_wall_ns(const std::string &csv) {
    std::istringstream in(csv);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) {
            fields.push_back(f);
        }
        if (fields.size() == 7 && fields[5] != "wall_ns") {
            fields[5] = "-";
        }
        for (std::size_t i = 0; i < fields.size(); ++i) {
            out << (i > 0 ? "," : "") << fields[i];
        }
        out << "\n";
    }
    return out.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string &name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("bench writes csv and svg with the expected row count") {
    TempDir dir("sparsecot_cli_bench");
    const int rc = run("bench --pattern full,window:w=8,causal --sweep 64,128,256,512 --out " +
                       dir.path.string() + " --seed 3");
    CHECK(rc == 0);
    const std::string csv = slurp(dir.path / "cost_report.csv");
    std::size_t lines = 0;
    for (char c : csv) {
        lines += c == '\n' ? 1 : 0;
    }
    CHECK(lines == 9); // header + 2 patterns x 4 lengths
    CHECK(csv.rfind("seq_len,pattern,allowed_pairs,active_pairs,flops_est,wall_ns,run_id\n", 0) ==
          0);
    CHECK(csv.find("512,full,262144,") != std::string::npos);
    CHECK(csv.find("512,window:w=8+causal,4068,") != std::string::npos);
    CHECK(slurp(dir.path / "cost_curves.svg").rfind("<svg", 0) == 0);
}

TEST_CASE("bench reruns are byte-identical apart from wall_ns") {
    TempDir a("sparsecot_cli_det_a"), b("sparsecot_cli_det_b");
    const std::string args = "bench --pattern full,topk:k=8+causal --sweep 32,64,128,256 --seed 7";
    CHECK(run(args + " --out " + a.path.string()) == 0);
    CHECK(run(args + " --out " + b.path.string()) == 0);
    CHECK(strip_wall_ns(slurp(a.path / "cost_report.csv")) ==
          strip_wall_ns(slurp(b.path / "cost_report.csv")));
    CHECK(slurp(a.path / "cost_curves.svg") == slurp(b.path / "cost_curves.svg"));
}

TEST_CASE("bench rejects bad patterns and non-increasing sweeps") {
    TempDir dir("sparsecot_cli_badpat");
    CHECK(run("bench --pattern zigzag --sweep 32,64,128,256 --out " + dir.path.string()) == 2);
    CHECK(run("bench --pattern full --sweep 64,64 --out " + dir.path.string()) == 2);
}

TEST_CASE("bench honors the thread cap variable") {
    TempDir a("sparsecot_cli_thr_a"), b("sparsecot_cli_thr_b");
    const std::string args = "bench --pattern full --sweep 16,32,64,128 --seed 5 --out ";
    const std::string one = "SPARSE_COT_THREADS=1 " + cli_path() + " " + args + a.path.string() +
                            " >/dev/null 2>&1";
    const std::string four = "SPARSE_COT_THREADS=4 " + cli_path() + " " + args + b.path.string() +
                             " >/dev/null 2>&1";
    CHECK(WEXITSTATUS(std::system(one.c_str())) == 0);
    CHECK(WEXITSTATUS(std::system(four.c_str())) == 0);
    CHECK(strip_wall_ns(slurp(a.path / "cost_report.csv")) ==
          strip_wall_ns(slurp(b.path / "cost_report.csv")));
    const std::string bad = "SPARSE_COT_THREADS=zero " + cli_path() + " " + args +
                            a.path.string() + " >/dev/null 2>&1";
    CHECK(WEXITSTATUS(std::system(bad.c_str())) == 2);
}

TEST_CASE("gradcheck passes by default and fails at an impossible threshold") {
    TempDir dir("sparsecot_cli_gc");
    CHECK(run("gradcheck --seed 11 --out " + dir.path.string()) == 0);
    const std::string report = slurp(dir.path / "gradcheck.txt");
    CHECK(report.find("ffn:") != std::string::npos);
    CHECK(report.find("attention:") != std::string::npos);
    CHECK(report.find("model:") != std::string::npos);
    CHECK(report.find("masked_embedding_grads_zero: PASS") != std::string::npos);
    CHECK(report.find("FAIL") == std::string::npos);

    CHECK(run("gradcheck --seed 11 --threshold 0") == 1);
}

TEST_CASE("gradcheck reruns produce identical reports") {
    TempDir a("sparsecot_cli_gc_a"), b("sparsecot_cli_gc_b");
    CHECK(run("gradcheck --seed 13 --out " + a.path.string()) == 0);
    CHECK(run("gradcheck --seed 13 --out " + b.path.string()) == 0);
    CHECK(slurp(a.path / "gradcheck.txt") == slurp(b.path / "gradcheck.txt"));
}

TEST_CASE("train-toy writes a loss curve and checkpoint; steps=0 gives the seed state") {
    TempDir dir("sparsecot_cli_tt");
    CHECK(run("train-toy --task copy --steps 0 --out " + dir.path.string()) == 0);
    CHECK(slurp(dir.path / "loss_curve.csv") == "step,loss\n");
    CHECK(fs::exists(dir.path / "model.ckpt"));
}

TEST_CASE("train-toy resume continues the loss curve") {
    TempDir full_dir("sparsecot_cli_tt_full"), head_dir("sparsecot_cli_tt_head"),
        tail_dir("sparsecot_cli_tt_tail");
    const std::string common = " --task copy --lr 0.1 --batch 4 --seed 19 --out ";
    CHECK(run("train-toy --steps 12" + common + full_dir.path.string()) == 0);
    CHECK(run("train-toy --steps 6" + common + head_dir.path.string()) == 0);
    CHECK(run("train-toy --steps 6" + common + tail_dir.path.string() + " --resume " +
              (head_dir.path / "model.ckpt").string()) == 0);

    // the resumed curve equals the tail of the full run
    std::istringstream full_csv(slurp(full_dir.path / "loss_curve.csv"));
    std::istringstream tail_csv(slurp(tail_dir.path / "loss_curve.csv"));
    std::vector<std::string> full_lines, tail_lines;
    std::string line;
    while (std::getline(full_csv, line)) full_lines.push_back(line);
    while (std::getline(tail_csv, line)) tail_lines.push_back(line);
    REQUIRE(full_lines.size() == 13);
    REQUIRE(tail_lines.size() == 7);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(tail_lines[1 + i] == full_lines[7 + i]);
    }
    // and the final checkpoints agree byte for byte
    CHECK(slurp(full_dir.path / "model.ckpt") == slurp(tail_dir.path / "model.ckpt"));
}

TEST_CASE("train-toy determinism across reruns") {
    TempDir a("sparsecot_cli_tt_a"), b("sparsecot_cli_tt_b");
    const std::string args = "train-toy --task reverse --steps 8 --lr 0.1 --batch 4 --seed 23";
    CHECK(run(args + " --out " + a.path.string()) == 0);
    CHECK(run(args + " --out " + b.path.string()) == 0);
    CHECK(slurp(a.path / "loss_curve.csv") == slurp(b.path / "loss_curve.csv"));
    CHECK(slurp(a.path / "model.ckpt") == slurp(b.path / "model.ckpt"));
}

TEST_CASE("oracle subcommand passes and enforces the subset limit") {
    TempDir a("sparsecot_cli_or_a"), b("sparsecot_cli_or_b");
    CHECK(run("oracle --seed 29 --out " + a.path.string()) == 0);
    CHECK(run("oracle --seed 29 --out " + b.path.string()) == 0);
    const std::string report = slurp(a.path / "oracle_report.txt");
    CHECK(report.find("sparsemax_vs_projection_oracle") != std::string::npos);
    CHECK(report.find("pair_count_closed_forms") != std::string::npos);
    CHECK(report.find("dense_limit_equivalence") != std::string::npos);
    CHECK(report.find("FAIL") == std::string::npos);
    CHECK(slurp(a.path / "oracle_report.txt") == slurp(b.path / "oracle_report.txt"));

    CHECK(run("oracle --n 17") == 2);
}

TEST_CASE("oracle passes across seeds") {
    for (int seed : {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}) {
        CHECK(run("oracle --seed " + std::to_string(seed)) == 0);
    }
}

TEST_CASE("decode round trip through config and checkpoint files") {
    TempDir dir("sparsecot_cli_dec");
    const fs::path cfg_path = dir.path / "model.cfg";
    {
        std::ofstream cfg(cfg_path);
        cfg << "V=16\nD=32\nH=2\nL_enc=1\nL_dec=1\nT=1\nalpha=0.75\n"
               "enc_pattern=window:w=4\ndec_self_pattern=window:w=4+causal\n"
               "cross_pattern=full\nseed=42\n";
    }
    CHECK(run("train-toy --task copy --steps 2000 --lr 0.2 --config " + cfg_path.string() +
              " --out " + dir.path.string()) == 0);
    const std::string cmd = cli_path() + " decode --config " + cfg_path.string() + " --ckpt " +
                            (dir.path / "model.ckpt").string() +
                            " --tokens 3,1,4 > " + (dir.path / "decode.out").string() + " 2>&1";
    CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    const std::string out = slurp(dir.path / "decode.out");
    CHECK(out == "3 1 4\n");
}

TEST_CASE("usage errors exit with code 2") {
    CHECK(run("") == 2);
    CHECK(run("bench") == 2);
    CHECK(run("no-such-subcommand") == 2);
    CHECK(run("train-toy --task swizzle --steps 1 --out /tmp/x_sparsecot_cli") == 2);
}
