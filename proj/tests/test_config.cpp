#include <gtest/gtest.h>

#include "splitnn/config.hpp"

using namespace splitnn;

TEST(Config, DefaultsMatchTheSchemaAndTypedViews) {
    RunConfig c;
    EXPECT_EQ(c.get_uint("search.trials"), 60u);
    EXPECT_EQ(c.get_list("search.channel_choices"), (std::vector<std::uint16_t>{2, 4, 8, 16, 32}));
    EXPECT_EQ(c.get_list("search.stride_choices"), (std::vector<std::uint16_t>{2, 4, 6}));
    EXPECT_DOUBLE_EQ(c.get_real("search.q_min"), 0.5);
    EXPECT_DOUBLE_EQ(c.get_real("search.q_max"), 16.0);
    EXPECT_DOUBLE_EQ(c.get_real("search.l_min"), -4.0);
    EXPECT_DOUBLE_EQ(c.get_real("search.l_max"), -1.0);
    EXPECT_EQ(c.get_text("split.point"), "block3");
    auto s = c.search_space();
    EXPECT_EQ(s, SearchSpace{});
    EXPECT_EQ(c.toy().image_size, 32u);
    EXPECT_GT(c.train().alpha, 0.0);
}

TEST(Config, FileSyntaxAndOverrides) {
    RunConfig c;
    c.load_text("# comment\n[search]\ntrials = 5   # inline\nchannel_choices = 2, 8\n\n[train]\nepochs=3\n");
    EXPECT_EQ(c.get_uint("search.trials"), 5u);
    EXPECT_EQ(c.get_list("search.channel_choices"), (std::vector<std::uint16_t>{2, 8}));
    EXPECT_EQ(c.get_uint("train.epochs"), 3u);
    c.set_assignment("train.epochs=4");
    EXPECT_EQ(c.get_uint("train.epochs"), 4u);
    c.set("train.cosine_lr", "false");
    EXPECT_FALSE(c.get_bool("train.cosine_lr"));
}

TEST(Config, ErrorsNameTheProblem) {
    RunConfig c;
    EXPECT_THROW(c.set("nope.key", "1"), ConfigError);
    EXPECT_THROW(c.set("search.trials", "-1"), ConfigError);
    EXPECT_THROW(c.set("search.trials", "3x"), ConfigError);
    EXPECT_THROW(c.set("train.cosine_lr", "maybe"), ConfigError);
    EXPECT_THROW(c.set("search.channel_choices", "2,0"), ConfigError);
    EXPECT_THROW(c.set_assignment("no_equals"), ConfigError);
    try {
        c.load_text("[search]\ntrials = 2\nbogus = 1\n", "f.cfg");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("f.cfg:3"), std::string::npos);
    }
    EXPECT_THROW(c.load_text("[search\n"), ConfigError);
    EXPECT_THROW(c.load_file("/nonexistent/x.cfg"), IoError);
}

TEST(Config, JsonAndRenderRoundTrip) {
    RunConfig c;
    c.set("train.lr", "0.0123456789012345");
    c.set("search.stride_choices", "6,2");
    c.set("paths.work_dir", "some dir");
    auto back = RunConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json().dump(), c.to_json().dump());
    RunConfig r;
    r.load_text(c.render());
    EXPECT_EQ(r.to_json().dump(), c.to_json().dump());
    EXPECT_EQ(r.hash(), c.hash());
}

TEST(Config, SectionHashesIgnoreOtherSections) {
    RunConfig a, b;
    b.set("search.trials", "7");
    EXPECT_EQ(a.hash({"dataset", "model"}), b.hash({"dataset", "model"}));
    EXPECT_NE(a.hash(), b.hash());
    b.set("search.workers", "4");
    EXPECT_EQ(b.hash({"search.trials"}), [&] {
        RunConfig c;
        c.set("search.trials", "7");
        return c.hash({"search.trials"});
    }());
}
