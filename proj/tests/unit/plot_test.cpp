#include <gtest/gtest.h>

#include "growth/experiments.hpp"
#include "growth/plot.hpp"
#include "support.hpp"

using namespace growth;

TEST(Svg, ContainsGeometryAndEscapesText) {
  plot::Chart c;
  c.title = "a < b & c";
  c.lines.push_back({{0, 1, 2}, {15, 16, 15.5}});
  c.areas.push_back({{0, 1, 2}, {14, 15, 14.5}, {16, 17, 16.5}});
  c.hline = 16.0;
  const auto svg = plot::render_svg(c);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
  EXPECT_NE(svg.find("a &lt; b &amp; c"), std::string::npos);
  EXPECT_EQ(svg.find("a < b"), std::string::npos);
}

TEST(Charts, FromSweepReport) {
  magma::ModelConfig cfg;
  cfg.max_vem_iters = 3;
  cfg.working_grid.clear();
  for (double t = 0; t <= 120; t += 10) cfg.working_grid.push_back(t);
  const std::vector<std::size_t> ks = {2};
  const auto sweep = experiments::run_cluster_sweep(fixture::small_cohort(12, 3).cohort, ks, cfg);
  const auto charts = plot::charts_from_json(experiments::format_sweep_json(sweep));
  ASSERT_FALSE(charts.empty());
  EXPECT_EQ(charts[0].second.lines.size(), 2u);
}

TEST(Charts, RiskSamplesHighlightCrossings) {
  const std::string j = R"({"protocol":"risk_samples","threshold":22.0,
    "target_ages":[96,108,120],"samples":[[18,20,23],[17,18,19]]})";
  const auto charts = plot::charts_from_json(j);
  ASSERT_EQ(charts.size(), 1u);
  const auto& c = charts[0].second;
  EXPECT_EQ(c.lines[0].color, "#000000");
  EXPECT_EQ(c.lines[1].color, "#9e9e9e");
  EXPECT_DOUBLE_EQ(c.lines[0].x[2], 10.0);
}

TEST(Charts, UnknownProtocolRejected) {
  EXPECT_THROW(plot::charts_from_json(R"({"protocol":"nope"})"), std::invalid_argument);
  EXPECT_ANY_THROW(plot::charts_from_json("[1,2"));
}
