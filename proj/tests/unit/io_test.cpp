#include <nettomo/config.hpp>
#include <nettomo/io.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <unistd.h>

using namespace nettomo;
namespace fs = std::filesystem;

namespace {

class IoTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("nettomo_io_" + std::to_string(::getpid()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path path(const std::string &name) const { return dir_ / name; }

    void write_text(const std::string &name, const std::string &text) const {
        fs::create_directories(dir_);
        std::ofstream(path(name)) << text;
    }

    fs::path dir_;
};

std::string parse_error_message(const std::function<void()> &fn) {
    try {
        fn();
    } catch (const ParseError &e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST_F(IoTest, MatrixCsvRoundTripIsExact) {
    Rng rng(1);
    Matrix m = gaussian_matrix(7, 5, 1.0, rng);
    m(0, 0) = 1e-300;
    m(0, 1) = -1e300;
    m(1, 0) = std::numeric_limits<double>::denorm_min();
    m(1, 1) = 0.1;
    m(2, 2) = 1.0 / 3.0;
    m(3, 3) = -0.0;
    write_matrix_csv(path("m.csv"), m);
    const Matrix back = read_matrix_csv(path("m.csv"));
    ASSERT_EQ(back.rows(), 7);
    ASSERT_EQ(back.cols(), 5);
    for (Index i = 0; i < m.size(); ++i) EXPECT_EQ(back(i), m(i)) << i;
    EXPECT_TRUE(std::signbit(back(3, 3)));
}

TEST_F(IoTest, CsvDialect) {
    Matrix m(2, 3);
    m << 1, 2.5, -3, 0, 1e-7, 4;
    std::ostringstream out;
    write_matrix_csv(out, m);
    EXPECT_EQ(out.str(), "1,2.5,-3\n0,9.9999999999999995e-08,4\n");
}

TEST_F(IoTest, ParseErrorsNameFileAndLine) {
    write_text("bad.csv", "1,2\n3,x\n");
    EXPECT_NE(parse_error_message([&] { read_matrix_csv(path("bad.csv")); }).find("bad.csv:2"),
              std::string::npos);
    write_text("ragged.csv", "1,2\n\n3,4\n5\n");
    const std::string msg = parse_error_message([&] { read_matrix_csv(path("ragged.csv")); });
    EXPECT_NE(msg.find("ragged.csv:4"), std::string::npos) << msg;
    EXPECT_NE(parse_error_message([&] { read_matrix_csv(path("missing.csv")); }).find("missing.csv"),
              std::string::npos);
}

TEST_F(IoTest, EmptyFileGivesEmptyMatrix) {
    write_text("empty.csv", "\n");
    EXPECT_EQ(read_matrix_csv(path("empty.csv")).size(), 0);
}

TEST_F(IoTest, MaskRoundTripAndValidation) {
    const BoolArray mask = gen_mask(6, 9, 0.4, 3).array();
    write_mask_csv(path("mask.csv"), mask);
    EXPECT_TRUE((read_mask_csv(path("mask.csv")) == mask).all());
    write_text("bad_mask.csv", "0,1\n2,0\n");
    EXPECT_THROW(read_mask_csv(path("bad_mask.csv")), ParseError);
}

TEST_F(IoTest, KeyValueSectionsAndComments) {
    std::istringstream in("# comment\nrun.seed = 4\n\n[admm]\nlambda=0.5\n; other comment\n"
                          "[mm]\naccelerate = off\n");
    const KeyValueFile kv = KeyValueFile::parse(in, "cfg");
    EXPECT_EQ(kv.get_int("run.seed"), 4);
    EXPECT_EQ(kv.get_double("admm.lambda"), 0.5);
    EXPECT_FALSE(kv.get_bool("mm.accelerate", true));
    EXPECT_EQ(kv.keys().size(), 3u);
}

TEST_F(IoTest, KeyValueErrors) {
    std::istringstream bad("a=1\nnot a pair\n");
    try {
        KeyValueFile::parse(bad, "cfg.txt");
        FAIL();
    } catch (const ParseError &e) {
        EXPECT_NE(std::string(e.what()).find("cfg.txt:2"), std::string::npos);
    }
    KeyValueFile kv;
    kv.set("x", std::string("abc"));
    kv.set("flag", std::string("maybe"));
    kv.set("n", 2.5);
    EXPECT_THROW(kv.get_double("x"), ConfigError);
    EXPECT_THROW(kv.get_bool("flag", false), ConfigError);
    EXPECT_THROW(kv.get_int("n"), ConfigError);
    EXPECT_THROW(kv.get("absent"), ConfigError);
    EXPECT_EQ(kv.get_double("absent", 3.0), 3.0);
}

TEST_F(IoTest, KeyValueRoundTrip) {
    KeyValueFile kv;
    kv.set("b.second", 0.1);
    kv.set("a.first", std::string("text value"));
    kv.set("c.list", std::string("1,2,3"));
    kv.write(path("kv.txt"));
    const KeyValueFile back = KeyValueFile::read(path("kv.txt"));
    EXPECT_EQ(back.keys(), kv.keys());
    EXPECT_EQ(back.get_double("b.second"), 0.1);
    EXPECT_EQ(back.get("a.first"), "text value");
    EXPECT_EQ(back.get_list("c.list", {}), (std::vector<double>{1, 2, 3}));
}

TEST_F(IoTest, UnknownConfigKeyRejected) {
    KeyValueFile kv;
    kv.set("scenario.flowz", 10);
    try {
        resolve_config(kv);
        FAIL();
    } catch (const ConfigError &e) {
        EXPECT_NE(std::string(e.what()).find("scenario.flowz"), std::string::npos);
    }
}

TEST_F(IoTest, ResolvedConfigFeedsConverters) {
    std::istringstream in("[scenario]\nflows=12\ntimes=9\n[admm]\ntol=1e-9\n[grid]\nranks=1,3\n");
    const KeyValueFile c = resolve_config(KeyValueFile::parse(in, "cfg"));
    EXPECT_EQ(c.keys().size(), config_keys().size());
    const ScenarioParams sp = scenario_from_config(c);
    EXPECT_EQ(sp.flows, 12);
    EXPECT_EQ(sp.times, 9);
    EXPECT_EQ(sp.nodes, 15);
    EXPECT_EQ(admm_from_config(c).tol_primal, 1e-9);
    EXPECT_EQ(phase_grid_from_config(c).ranks, (std::vector<Index>{1, 3}));
    EXPECT_TRUE(mm_from_config(c).accelerate);
    EXPECT_EQ(burst_from_config(c).burst.nu, 0.1);
    EXPECT_EQ(netflow_from_config(c).pis.size(), 4u);
}

TEST_F(IoTest, InvalidConfigValuesRejected) {
    KeyValueFile kv;
    kv.set("scenario.pi", 1.5);
    EXPECT_THROW(scenario_from_config(resolve_config(kv)).validate(), ConfigError);
    KeyValueFile ranks;
    ranks.set("grid.ranks", std::string("1.5,2"));
    EXPECT_THROW(phase_grid_from_config(resolve_config(ranks)), ConfigError);
}

TEST_F(IoTest, PgmLevelsAndFormat) {
    Matrix e(2, 3);
    e << 0.0, 0.01, 1.0, 5.0, 0.505, std::numeric_limits<double>::quiet_NaN();
    write_pgm(path("grid.pgm"), e);
    const GrayImage img = read_pgm(path("grid.pgm"));
    EXPECT_EQ(img.width, 3);
    EXPECT_EQ(img.height, 2);
    ASSERT_EQ(img.pixels.size(), 6u);
    EXPECT_EQ(img.pixels[0], 255);
    EXPECT_EQ(img.pixels[1], 255);
    EXPECT_EQ(img.pixels[2], 0);
    EXPECT_EQ(img.pixels[3], 0);
    EXPECT_EQ(img.pixels[4], 128);
    EXPECT_EQ(img.pixels[5], 128);
    std::ifstream raw(path("grid.pgm"), std::ios::binary);
    std::string header(11, '\0');
    raw.read(header.data(), 11);
    EXPECT_EQ(header, "P5\n3 2\n255\n");
    EXPECT_EQ(fs::file_size(path("grid.pgm")), 11u + 6u);
}

TEST_F(IoTest, PgmRejectsOtherFormats) {
    write_text("p2.pgm", "P2\n1 1\n255\n0\n");
    EXPECT_THROW(read_pgm(path("p2.pgm")), ParseError);
    write_text("short.pgm", "P5\n4 4\n255\nab");
    EXPECT_THROW(read_pgm(path("short.pgm")), ParseError);
}

TEST_F(IoTest, TopologyAndOdPairsRoundTrip) {
    const Topology topo(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
    write_topology_csv(path("topo.csv"), topo);
    const auto links = read_links_csv(path("topo.csv"));
    ASSERT_EQ(links.size(), 4u);
    for (std::size_t i = 0; i < links.size(); ++i) {
        EXPECT_EQ(links[i].from, topo.links()[i].from);
        EXPECT_EQ(links[i].to, topo.links()[i].to);
    }
    const std::vector<OdPair> od{{0, 2}, {3, 1}, {2, 0}};
    const auto back = parse_od_pairs(format_od_pairs(od));
    ASSERT_EQ(back.size(), od.size());
    for (std::size_t i = 0; i < od.size(); ++i) {
        EXPECT_EQ(back[i].origin, od[i].origin);
        EXPECT_EQ(back[i].destination, od[i].destination);
    }
    EXPECT_THROW(parse_od_pairs("1-2"), ParseError);
}

TEST_F(IoTest, OutputDirectoriesAreCreated) {
    write_matrix_csv(path("deep/nested/m.csv"), Matrix::Identity(2, 2));
    EXPECT_TRUE(fs::exists(path("deep/nested/m.csv")));
}
