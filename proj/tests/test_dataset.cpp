#include <gtest/gtest.h>

#include <cstdio>
#include <set>

#include "moe/dataset.hpp"

namespace moe {
namespace {

struct CollectFixture {
  MoeModel moe;
  HeadModel head = make_head();
  CameraModel camera;
  CurrentModel current;

  SamplerConfig small_sampler(std::uint64_t seed = 1) const {
    SamplerConfig s;
    s.n_episodes = 40;
    s.steps_per_episode = 5;
    s.seed = seed;
    return s;
  }
};

TEST(Collect, EpisodeTimesStepsSamplesWhenNothingFails) {
  CollectFixture fx;
  SamplerConfig sampler = fx.small_sampler();
  const DatasetFile ds =
      collect(sampler, fx.moe, fx.head, fx.camera, fx.current, "wig3");
  EXPECT_EQ(ds.skipped_episodes, 0u);
  EXPECT_EQ(ds.samples.size(),
            static_cast<std::size_t>(sampler.n_episodes) *
                sampler.steps_per_episode);
  EXPECT_EQ(ds.wig_name, "wig3");
  for (const auto& s : ds.samples) {
    EXPECT_TRUE(is_finite(s.q));
    EXPECT_GE(s.q.minCoeff(), 0.0);
    EXPECT_TRUE(is_finite(s.w));
  }
}

TEST(Collect, CoverageGuardHoldsOnDefaults) {
  CollectFixture fx;
  const DatasetFile ds =
      collect(fx.small_sampler(7), fx.moe, fx.head, fx.camera, fx.current);
  std::size_t contact = 0, free_space = 0;
  for (const auto& s : ds.samples) {
    if (s.w.norm() > 0.05) ++contact;
    if (s.w.norm() == 0.0) ++free_space;
  }
  const double n = static_cast<double>(ds.samples.size());
  EXPECT_GE(contact, 0.30 * n);
  EXPECT_GE(free_space, 0.10 * n);
}

TEST(Collect, NoContactSamplerYieldsZeroLabelsAndCommandOnlyLoads) {
  CollectFixture fx;
  SamplerConfig sampler = fx.small_sampler(3);
  sampler.n_episodes = 10;
  sampler.standoff_min = 0.05;  // hover far above the hair
  sampler.standoff_max = 0.08;
  sampler.descent_max = 0.0;
  sampler.enforce_coverage = false;
  sampler.q_noise_sigma = 0.0;
  const DatasetFile ds =
      collect(sampler, fx.moe, fx.head, fx.camera, fx.current);
  for (const auto& s : ds.samples) {
    EXPECT_EQ(s.w.norm(), 0.0);
  }
}

TEST(Collect, ByteIdenticalAcrossRunsAndThreadCounts) {
  CollectFixture fx;
  SamplerConfig sampler = fx.small_sampler(11);
  sampler.n_episodes = 12;
  const auto a = serialize_dataset(
      collect(sampler, fx.moe, fx.head, fx.camera, fx.current, "wig1", 1));
  const auto b = serialize_dataset(
      collect(sampler, fx.moe, fx.head, fx.camera, fx.current, "wig1", 1));
  const auto c = serialize_dataset(
      collect(sampler, fx.moe, fx.head, fx.camera, fx.current, "wig1", 2));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);

  sampler.seed = 12;
  const auto d = serialize_dataset(
      collect(sampler, fx.moe, fx.head, fx.camera, fx.current, "wig1", 1));
  EXPECT_NE(a, d);
}

// Re-running the recorded episode stream reproduces the stored labels.
TEST(Collect, LabelConsistencyFromRecordedSeed) {
  CollectFixture fx;
  SamplerConfig sampler = fx.small_sampler(21);
  sampler.n_episodes = 8;
  const DatasetFile ds =
      collect(sampler, fx.moe, fx.head, fx.camera, fx.current);
  for (std::uint32_t episode : {0u, 3u, 7u}) {
    const auto rerun = detail::collect_episode(sampler, fx.moe, fx.head,
                                               fx.camera, fx.current, episode);
    ASSERT_FALSE(rerun.failed);
    for (const auto& redo : rerun.samples) {
      bool found = false;
      for (const auto& s : ds.samples) {
        if (s.episode == redo.episode && s.time_index == redo.time_index) {
          EXPECT_LE((s.w - redo.w).norm(), 1e-9);
          found = true;
          break;
        }
      }
      EXPECT_TRUE(found);
    }
  }
}

TEST(Split, FractionAndPartitionProperties) {
  DatasetFile ds;
  ds.width = ds.height = 4;
  for (std::uint32_t e = 0; e < 10; ++e) {
    for (std::uint32_t k = 0; k < 3; ++k) {
      DepthFrame f(4, 4);
      ds.samples.push_back(
          Sample{masked_from_raw_parts(std::move(f)), Vec4::Zero(), Vec3::Zero(),
                 e, k});
    }
  }
  const EpisodeSplit sp = split(ds, 0.2, 5);
  EXPECT_EQ(sp.test_episodes.size(), 2u);
  EXPECT_EQ(sp.train_episodes.size(), 8u);

  std::set<std::uint32_t> all(sp.train_episodes.begin(), sp.train_episodes.end());
  for (auto e : sp.test_episodes) {
    EXPECT_TRUE(all.insert(e).second);  // disjoint
  }
  EXPECT_EQ(all.size(), 10u);  // union covers everything

  const EpisodeSplit again = split(ds, 0.2, 5);
  EXPECT_EQ(sp.test_episodes, again.test_episodes);
  const EpisodeSplit other = split(ds, 0.2, 6);
  EXPECT_TRUE(other.test_episodes != sp.test_episodes ||
              other.train_episodes != sp.train_episodes ||
              true);  // different seed may coincide; only determinism is asserted

  DatasetFile one;
  one.width = one.height = 4;
  DepthFrame f(4, 4);
  one.samples.push_back(Sample{masked_from_raw_parts(std::move(f)), Vec4::Zero(),
                               Vec3::Zero(), 0, 0});
  EXPECT_THROW(split(one, 0.2, 1), ContractViolation);
  EXPECT_THROW(split(ds, 0.0, 1), ContractViolation);
}

TEST(DatasetIo, RoundTripByteIdentical) {
  CollectFixture fx;
  SamplerConfig sampler = fx.small_sampler(31);
  sampler.n_episodes = 6;
  const DatasetFile ds =
      collect(sampler, fx.moe, fx.head, fx.camera, fx.current, "wig2");
  const auto bytes = serialize_dataset(ds);
  const DatasetFile back = deserialize_dataset(bytes);
  EXPECT_EQ(serialize_dataset(back), bytes);
  EXPECT_EQ(back.samples.size(), ds.samples.size());
  EXPECT_EQ(back.wig_name, "wig2");
  EXPECT_EQ(back.global_seed, sampler.seed);

  const std::string path = ::testing::TempDir() + "dataset_roundtrip.moedset";
  write_dataset(ds, path);
  EXPECT_EQ(read_file(path), bytes);
  std::remove(path.c_str());
}

TEST(DatasetIo, DistinctErrorsForMagicVersionChecksum) {
  DatasetFile empty;
  empty.width = empty.height = 8;
  empty.wig_name = "wig1";
  const auto bytes = serialize_dataset(empty);
  EXPECT_EQ(serialize_dataset(deserialize_dataset(bytes)), bytes);  // degenerate ok

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  try {
    deserialize_dataset(bad_magic);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_EQ(e.kind, IoError::Kind::BadMagic);
  }

  auto flipped = bytes;
  flipped[9] ^= 0x40;  // inside the version field
  try {
    deserialize_dataset(flipped);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_EQ(e.kind, IoError::Kind::BadChecksum);
  }

  // version bump with a fixed-up checksum must fail as BadVersion
  DatasetFile v2 = empty;
  v2.version = 2;
  try {
    deserialize_dataset(serialize_dataset(v2));
    FAIL();
  } catch (const IoError& e) {
    EXPECT_EQ(e.kind, IoError::Kind::BadVersion);
  }
}

TEST(DatasetIo, ExamplesForEpisodesFiltersCorrectly) {
  DatasetFile ds;
  ds.width = ds.height = 4;
  for (std::uint32_t e = 0; e < 4; ++e) {
    for (std::uint32_t k = 0; k < 2; ++k) {
      DepthFrame f(4, 4);
      ds.samples.push_back(Sample{masked_from_raw_parts(std::move(f)),
                                  Vec4::Constant(e), Vec3::Constant(e), e, k});
    }
  }
  const auto ex = examples_for_episodes(ds, {1, 3});
  ASSERT_EQ(ex.size(), 4u);
  for (const auto& x : ex) {
    EXPECT_TRUE(x.w == Vec3::Constant(1) || x.w == Vec3::Constant(3));
  }
  EXPECT_EQ(dataset_labels(ds).size(), 8u);
}

}  // namespace
}  // namespace moe
