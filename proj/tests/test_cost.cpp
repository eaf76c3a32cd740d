#include <gtest/gtest.h>

#include "mathforge/cost.hpp"
#include "oracles.hpp"

using namespace mathforge;
using namespace mathforge::cost;

namespace {
const PriceSheet kPrices{};

RunProfile find(const std::string& name) {
  for (const auto& r : reference_profiles()) {
    if (r.name == name) return r;
  }
  throw std::runtime_error("no profile " + name);
}
}  // namespace

TEST(Decimal, ParseAndPrint) {
  EXPECT_EQ(Decimal::parse("40.96").str(), "40.96");
  EXPECT_EQ(Decimal::parse("865,000").str(), "865000");
  EXPECT_EQ(Decimal::parse("1.50").str(), "1.5");
  EXPECT_EQ(Decimal::parse("1.5").str(2), "1.50");
  EXPECT_EQ(Decimal::parse("-0.05").str(), "-0.05");
  EXPECT_EQ(Decimal::parse("0.001").str(), "0.001");
  EXPECT_THROW(Decimal::parse(""), InvalidArgument);
  EXPECT_THROW(Decimal::parse("1.2.3"), InvalidArgument);
  EXPECT_THROW(Decimal::parse("12a"), InvalidArgument);
}

TEST(Decimal, ExactArithmetic) {
  // 0.1 + 0.2 is exact here.
  EXPECT_EQ(Decimal::parse("0.1") + Decimal::parse("0.2"), Decimal::parse("0.3"));
  EXPECT_EQ((Decimal::parse("1.1") * Decimal::parse("1.1")).str(), "1.21");
  EXPECT_EQ(Decimal::parse("39599.99").truncated(), 39599);
  EXPECT_EQ(Decimal::parse("-3.7").truncated(), -3);
}

TEST(Cost, ComponentValuesForReferenceRows) {
  EXPECT_EQ(api_cost(find("KPMath-DSMath-7B"), kPrices).str(2), "39599.70");
  EXPECT_EQ(server_cost(find("DeepSeekMath-7B-RL"), kPrices).str(2), "52428.80");
  const auto jz = find("JiuZhang3.0-7B");
  EXPECT_EQ(api_cost(jz, kPrices).str(2), "616.20");
  EXPECT_EQ(server_cost(jz, kPrices).str(2), "7864.32");
}

TEST(Cost, ReportedTotalsMatchIntegerOracle) {
  struct Row {
    const char* name;
    long long in, out, calls, hours, expected;
  };
  for (const auto& row : {Row{"KPMath-DSMath-7B", 1090, 218, 865000, 0, 39599},
                          Row{"DeepSeekMath-7B-RL", 0, 0, 0, 160, 52428},
                          Row{"JiuZhang3.0-7B", 300, 877, 10000, 24, 8480}}) {
    EXPECT_EQ(oracle::total_usd(row.in, row.out, row.calls, row.hours), row.expected) << row.name;
    EXPECT_EQ(reported_total(find(row.name), kPrices), row.expected) << row.name;
  }
}

TEST(Cost, AgreesWithOracleOnRandomIntegerProfiles) {
  SplitMix64 rng(77);
  for (int i = 0; i < 2000; ++i) {
    const long long in = static_cast<long long>(bounded(rng(), 5000));
    const long long out = static_cast<long long>(bounded(rng(), 5000));
    const long long calls = static_cast<long long>(bounded(rng(), 2'000'000));
    const long long hours = static_cast<long long>(bounded(rng(), 500));
    const auto r = make_profile("r", std::to_string(in), std::to_string(out), std::to_string(calls), "0",
                                std::to_string(hours));
    ASSERT_EQ(reported_total(r, kPrices), oracle::total_usd(in, out, calls, hours)) << in << " " << out << " " << calls;
  }
}

TEST(Cost, ZeroMonotoneAndLinear) {
  const auto zero = make_profile("z", "0", "0", "0", "0", "0");
  EXPECT_EQ(total_cost(zero, kPrices), Decimal(0));
  // No calls means no API cost whatever the token averages.
  EXPECT_EQ(api_cost(make_profile("n", "1000", "1000", "0", "0", "0"), kPrices), Decimal(0));

  auto base = find("JiuZhang3.0-7B");
  auto more = base;
  more.avg_output_tokens = base.avg_output_tokens + Decimal(1);
  EXPECT_TRUE(total_cost(base, kPrices) < total_cost(more, kPrices));
  more = base;
  more.train_hours = base.train_hours + Decimal::parse("0.5");
  EXPECT_TRUE(total_cost(base, kPrices) < total_cost(more, kPrices));

  auto twice = base;
  twice.num_calls = base.num_calls * Decimal(2);
  EXPECT_EQ(api_cost(twice, kPrices), api_cost(base, kPrices) * Decimal(2));
  twice = base;
  twice.synth_hours = base.synth_hours * Decimal(2);
  twice.train_hours = base.train_hours * Decimal(2);
  EXPECT_EQ(server_cost(twice, kPrices), server_cost(base, kPrices) * Decimal(2));
}

TEST(Cost, NegativeInputsRejected) {
  EXPECT_THROW(api_cost(make_profile("bad", "-1", "0", "1", "0", "0"), kPrices), InvalidArgument);
  EXPECT_THROW(parse_price_sheet(json{{"nodes", 0}}), InvalidArgument);
}

TEST(Cost, ParseProfilesFromJson) {
  const auto j = json::parse(R"([{"name":"a","avg_input_tokens":"300","avg_output_tokens":877,"num_calls":"10,000",
                                  "synth_hours":14,"train_hours":"10"},{"name":"b","train_hours":160}])");
  const auto profiles = parse_profiles(j);
  ASSERT_EQ(profiles.size(), 2u);
  EXPECT_EQ(reported_total(profiles[0], kPrices), 8480);
  EXPECT_EQ(reported_total(profiles[1], kPrices), 52428);
  EXPECT_THROW(parse_profiles(json::parse(R"({"num_calls":"lots"})")), InvalidArgument);
  EXPECT_THROW(parse_profiles(json::parse(R"({"num_calls":[1]})")), InvalidArgument);
}

TEST(Cost, PriceSheetOverrides) {
  const auto p = parse_price_sheet(json{{"api_input_price", "10"}, {"nodes", 1}});
  EXPECT_EQ(p.api_input_price, Decimal(10));
  EXPECT_EQ(p.api_output_price, Decimal(60));
  const auto r = make_profile("r", "1000000", "0", "1", "0", "1");
  EXPECT_EQ(total_cost(r, p).str(2), "50.96");
}

TEST(Cost, ReportTableAndJson) {
  const auto text = report(reference_profiles(), kPrices);
  EXPECT_NE(text.find("39,599 USD"), std::string::npos) << text;
  EXPECT_NE(text.find("52,428 USD"), std::string::npos);
  EXPECT_NE(text.find("8,480 USD"), std::string::npos);
  EXPECT_EQ(format_usd(1234567), "1,234,567 USD");
  EXPECT_EQ(format_usd(999), "999 USD");
  const auto j = profile_json(find("JiuZhang3.0-7B"), kPrices);
  EXPECT_EQ(j["total_cost"], "8480.52");
  EXPECT_EQ(j["reported_total_usd"], 8480);
}
