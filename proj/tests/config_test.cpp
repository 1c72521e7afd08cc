// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "deltakd/config.hpp"

using namespace deltakd;

TEST(Config, DefaultsMatchSchema) {
  const auto c = RunConfig::defaults();
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.kd.method.kind, DistillMethod::Kind::Delta);
  EXPECT_DOUBLE_EQ(c.kd.alpha.value(), 1.0);
  EXPECT_DOUBLE_EQ(c.kd.lambda.value(), 0.5);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.teacher_pretrain_steps, 3000u);
  EXPECT_EQ(c.teacher_sft_steps, 1500u);
  EXPECT_EQ(c.student_pretrain_steps, 3000u);
  EXPECT_EQ(c.distill_steps, 1500u);
  EXPECT_EQ(c.adam.warmup_steps, 100u);
  EXPECT_EQ(c.pretrain_size, 50000u);
  EXPECT_EQ(c.sft_size, 5000u);
  EXPECT_EQ(c.test_size, 500u);
  EXPECT_EQ(c.teacher, "local");
}

TEST(Config, ParsesCommentsAndWhitespace) {
  const auto v = parse_config_text("# header\n\n  seed = 11  # trailing\nmethod=fkl\r\n");
  EXPECT_EQ(v.at("seed"), "11");
  EXPECT_EQ(v.at("method"), "fkl");
  EXPECT_EQ(v.size(), 2u);
}

TEST(Config, PrecedenceMatrix) {
  // For every key: each of {default, file, flag} layering combinations.
  const std::vector<std::tuple<std::string, std::string, std::string, std::string>> keys{
      {"seed", "7", "21", "99"}, {"alpha", "1.0", "0.25", "0.75"}, {"method", "delta", "fkl", "rkl"},
      {"batch_size", "32", "8", "16"}, {"teacher", "local", "127.0.0.1:9000", "unix:/tmp/x.sock"}};
  for (const auto& [key, def, file_v, flag_v] : keys) {
    for (int file_set = 0; file_set < 2; ++file_set) {
      for (int flag_set = 0; flag_set < 2; ++flag_set) {
        ConfigValues file, flags;
        if (file_set) file = parse_config_text(key + " = " + file_v + "\n");
        if (flag_set) flags[key] = flag_v;
        const auto r = resolve_config(file, flags);
        const std::string expected = flag_set ? flag_v : file_set ? file_v : def;
        EXPECT_EQ(r.at(key), expected) << key << " file=" << file_set << " flag=" << flag_set;
      }
    }
  }
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_THROW(parse_config_text("sede = 3\n"), ConfigError);
  EXPECT_THROW(resolve_config({}, {{"bogus", "1"}}), ConfigError);
}

TEST(Config, ValidationListsEveryOffendingKey) {
  try {
    resolve_config(parse_config_text("alpha = 2\nlambda = -1\n"), {{"method", "nope"}, {"batch_size", "0"}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const char* k : {"alpha", "lambda", "method", "batch_size"}) EXPECT_NE(msg.find(k), std::string::npos) << k;
    EXPECT_EQ(e.kind(), "config_error");
  }
  try {
    parse_config_text("seed\nfoo = 1\nseed = 1\nseed = 2\n", "f.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("f.cfg:1"), std::string::npos);
    EXPECT_NE(msg.find("f.cfg:2"), std::string::npos);
    EXPECT_NE(msg.find("f.cfg:4"), std::string::npos);
  }
}

TEST(Config, MethodSpecificChecks) {
  EXPECT_THROW(resolve_config({}, {{"method", "v3"}}), ConfigError);
  EXPECT_NO_THROW(resolve_config({}, {{"method", "v3"}, {"allow_nontunable", "true"}}));
  EXPECT_NO_THROW(resolve_config({}, {{"method", "v1"}}));
  EXPECT_THROW(resolve_config({}, {{"tau", "0"}}), ConfigError);
  EXPECT_THROW(resolve_config({}, {{"teacher", "nohostport"}}), ConfigError);
  EXPECT_THROW(resolve_config({}, {{"task_mix", "1,1"}}), ConfigError);
  EXPECT_THROW(resolve_config({}, {{"task_mix", "0,0,0"}}), ConfigError);
  EXPECT_THROW(resolve_config({}, {{"test_size", "5000"}}), ConfigError);
}

TEST(Config, FormattedConfigRoundTrips) {
  const auto r = resolve_config({}, {{"seed", "3"}, {"method", "v2"}, {"task_mix", "1,0,2"}});
  const auto back = resolve_config(parse_config_text(format_config(r)), {});
  EXPECT_EQ(back, r);
  const auto c = RunConfig::from(back);
  EXPECT_EQ(c.kd.method, (DistillMethod{DistillMethod::Kind::Variant, VariantId::V2}));
  EXPECT_DOUBLE_EQ(c.task_mix.sort, 0.0);
  EXPECT_DOUBLE_EQ(c.task_mix.pattern, 2.0);
}
