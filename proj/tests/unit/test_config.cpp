#include <gtest/gtest.h>

#include <sstream>

#include "defector/config.hpp"

using namespace defector;

namespace {

Config parse(const std::string& text) {
  std::istringstream in(text);
  return Config::parse(in);
}

}  // namespace

TEST(Config, KeyValueWithComments) {
  const auto c = parse("# experiment\nseed = 7\n\npct=0.5   # observed share\npct = 0.25\nattacks = wf, hp\n");
  EXPECT_EQ(c.get_uint("seed", 1), 7u);
  EXPECT_EQ(c.get_double("pct", 0.33), 0.25);
  EXPECT_EQ(c.get_list("attacks", {}), (std::vector<std::string>{"wf", "hp"}));
  EXPECT_EQ(c.get_string("missing", "dflt"), "dflt");
}

TEST(Config, TypedGettersReject) {
  const auto c = parse("a = x\nb = -3\nc = maybe\n");
  EXPECT_THROW(c.get_double("a", 0), ConfigError);
  EXPECT_THROW(c.get_uint("b", 0), ConfigError);
  EXPECT_THROW(c.get_bool("c", false), ConfigError);
}

TEST(Config, SyntaxErrors) {
  EXPECT_THROW(parse("novalue\n"), ConfigError);
  EXPECT_THROW(parse(" = 3\n"), ConfigError);
  EXPECT_THROW(Config::load("/nonexistent/file.cfg"), ConfigError);
}

TEST(Config, UnknownKeysAndOverrides) {
  auto c = parse("seed = 1\n");
  c.set("seed", "9");
  EXPECT_EQ(c.get_uint("seed", 0), 9u);
  EXPECT_NO_THROW(c.require_known({"seed"}));
  c.set("sede", "2");
  EXPECT_THROW(c.require_known({"seed"}), ConfigError);
  EXPECT_TRUE(c.get_bool("flag", true));
}
