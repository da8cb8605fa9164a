#include <gtest/gtest.h>

#include <sstream>

#include "tdm/csv.hpp"
#include "tdm/rng.hpp"
#include "tdm/timeparse.hpp"

namespace {

using namespace tdm;

TEST(Csv, QuotedFieldsRoundTrip) {
    std::istringstream in("a,b\n\"x,y\",\"he said \"\"hi\"\"\"\nplain,2\n");
    csv::Reader reader(in);
    std::vector<std::string> row;
    ASSERT_TRUE(reader.read_row(row));
    EXPECT_EQ(row, (std::vector<std::string>{"a", "b"}));
    ASSERT_TRUE(reader.read_row(row));
    EXPECT_EQ(row[0], "x,y");
    EXPECT_EQ(row[1], "he said \"hi\"");
    ASSERT_TRUE(reader.read_row(row));
    EXPECT_EQ(reader.line(), 3u);
    EXPECT_FALSE(reader.read_row(row));
}

TEST(Csv, EscapeWriteReadIdentity) {
    std::ostringstream os;
    const std::vector<std::string> fields = {"plain", "with,comma", "with\"quote", "multi\nline"};
    csv::write_row(os, fields);
    std::istringstream in(os.str());
    csv::Reader reader(in);
    std::vector<std::string> row;
    ASSERT_TRUE(reader.read_row(row));
    EXPECT_EQ(row, fields);
}

TEST(Csv, CrlfHandled) {
    std::istringstream in("a,b\r\n1,2\r\n");
    csv::Reader reader(in);
    std::vector<std::string> row;
    ASSERT_TRUE(reader.read_row(row));
    EXPECT_EQ(row[1], "b");
    ASSERT_TRUE(reader.read_row(row));
    EXPECT_EQ(row[1], "2");
}

TEST(Csv, FormatDoubleRoundTrips) {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, 12345.678, 0.0, -2.5e17}) {
        const auto s = csv::format_double(v);
        const auto back = csv::parse_double(s);
        ASSERT_TRUE(back.has_value()) << s;
        EXPECT_EQ(*back, v) << s;
    }
}

TEST(Timeparse, EpochAndIsoAgree) {
    EXPECT_EQ(parse_epoch_seconds("0"), 0);
    EXPECT_EQ(parse_iso8601("1970-01-01T00:00:00"), 0);
    EXPECT_EQ(parse_iso8601("1970-01-01 00:00:10Z"), 10);
    // 2015-05-04 09:00:00 UTC
    EXPECT_EQ(parse_iso8601("2015-05-04T09:00:00"), 1430730000);
    EXPECT_EQ(parse_iso8601("2015-05-04T11:00:00+02:00"), 1430730000);
    EXPECT_FALSE(parse_iso8601("2015-13-04T09:00:00").has_value());
    EXPECT_FALSE(parse_iso8601("2015-02-29T09:00:00").has_value());
    EXPECT_FALSE(parse_epoch_seconds("12x").has_value());
}

TEST(Timeparse, FormatParsesBack) {
    for (std::int64_t t : {0LL, 1430730000LL, 86399LL, 951868800LL}) {
        EXPECT_EQ(parse_iso8601(format_iso8601(t)), t);
    }
}

TEST(Timeparse, DetectsFormat) {
    EXPECT_EQ(detect_timestamp_format("1430730000"), TimestampFormat::kEpochSeconds);
    EXPECT_EQ(detect_timestamp_format("2015-05-04T09:00:00"), TimestampFormat::kIso8601);
    EXPECT_FALSE(detect_timestamp_format("yesterday").has_value());
}

TEST(Rng, DeterministicAndSubstreamsIndependent) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());

    Rng root(7);
    Rng s1 = root.substream("compliance");
    Rng s2 = root.substream("mf-init");
    EXPECT_NE(s1.next_u64(), s2.next_u64());
    // substream derivation ignores parent draw position
    Rng root2(7);
    root2.next_u64();
    EXPECT_EQ(root2.substream("compliance").next_u64(), root.substream("compliance").next_u64());
}

TEST(Rng, UniformInRangeAndUnbiasedIsh) {
    Rng rng(123);
    double sum = 0;
    for (int i = 0; i < 20000; ++i) {
        const double v = rng.uniform();
        ASSERT_GE(v, 0.0);
        ASSERT_LT(v, 1.0);
        sum += v;
    }
    EXPECT_NEAR(sum / 20000, 0.5, 0.02);

    int counts[5] = {};
    for (int i = 0; i < 20000; ++i) ++counts[rng.uniform_int(0, 4)];
    for (int c : counts) EXPECT_NEAR(c, 4000, 400);
}

TEST(Rng, NormalMoments) {
    Rng rng(99);
    double sum = 0, sq = 0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.02);
    EXPECT_NEAR(sq / n, 1.0, 0.05);
}

}  // namespace
