#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "ditmos/mcu/schedule.hpp"

namespace {

using namespace ditmos;
using mcu::BufferInfo;
using mcu::ExecutionStep;
using mcu::Schedule;

Schedule hand_chain(bool with_tap, bool sliced)
{
    Schedule s;
    s.buffers = {{0, "in", {100}, 400}, {1, "l1", {200}, 800}, {2, "l2", {80}, 320}, {3, "l3", {10}, 40}};
    s.initial_buffers = {0};
    s.final_buffers = {3};
    ExecutionStep l1{0, mcu::Network::External, 0, 0, "l1", {0}, {1}, 200, 0, {}, {}};
    ExecutionStep l2{1, mcu::Network::External, 1, 0, "l2", {1}, {2}, 120, 0, {}, {}};
    ExecutionStep l3{2, mcu::Network::External, 2, 0, "l3", {2}, {3}, 60, 0, {}, {}};
    if (with_tap) {
        s.buffers.push_back({4, "tap", {120}, 480});
        l1.outputs.push_back(4);
        l3.inputs.push_back(4);
        if (sliced) {
            l1.store_to_flash.push_back(4);
            l3.load_from_flash.push_back(4);
        }
    }
    s.steps = {l1, l2, l3};
    return s;
}

model::CompositeModel perturbed_composite(bool aggregation, std::uint64_t seed)
{
    auto arch = model::ArchitectureSpec::defaults(3, 64, 5, 3);
    auto c = model::build_composite(arch, aggregation, seed);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (auto& net : c.classifiers) {
        for (auto& p : net.parameters()) {
            for (auto& v : p.data()) v += static_cast<nn::Scalar>(u(rng));
        }
    }
    return c;
}

nn::Tensor random_input(std::mt19937_64& rng, const nn::Shape& shape)
{
    std::normal_distribution<double> n(0.0, 1.0);
    nn::Tensor x(shape);
    for (auto& v : x.data()) v = static_cast<nn::Scalar>(n(rng));
    return x;
}

TEST(MemoryTrace, ThreeStepChainPeaksAtFirstStep)
{
    const auto t = mcu::simulate_memory(hand_chain(false, false));
    EXPECT_EQ(t.live_bytes, (std::vector<std::size_t>{1400, 1240, 420}));
    EXPECT_EQ(t.peak_bytes, 1400u);
    EXPECT_EQ(t.peak_step, 0u);
}

TEST(MemoryTrace, RetainedTapAddsToIntermediateSteps)
{
    const auto t = mcu::simulate_memory(hand_chain(true, false));
    EXPECT_EQ(t.live_bytes, (std::vector<std::size_t>{1880, 1720, 900}));
    const auto sliced = mcu::simulate_memory(hand_chain(true, true));
    EXPECT_EQ(sliced.live_bytes, (std::vector<std::size_t>{1880, 1240, 900}));
}

TEST(MemoryTrace, EmptyScheduleHasZeroPeak)
{
    Schedule s;
    const auto t = mcu::simulate_memory(s);
    EXPECT_EQ(t.peak_bytes, 0u);
    EXPECT_TRUE(t.live_bytes.empty());
}

TEST(MemoryTrace, DanglingReferenceThrows)
{
    auto s = hand_chain(false, false);
    s.steps[0].inputs = {2};  // read before it is produced
    EXPECT_THROW(mcu::simulate_memory(s), std::invalid_argument);
    auto missing = hand_chain(true, true);
    missing.steps[0].store_to_flash.clear();
    EXPECT_THROW(mcu::simulate_memory(missing), std::invalid_argument);
}

TEST(MemoryTrace, EveryResidencyIsClosedOnce)
{
    const auto t = mcu::simulate_memory(hand_chain(true, true));
    std::map<std::size_t, int> count;
    for (const auto& l : t.lifetimes) {
        EXPECT_LE(l.allocated_at, l.freed_after);
        ++count[l.buffer];
    }
    EXPECT_EQ(count[4], 2);  // produced, then reloaded
    EXPECT_EQ(count[0], 1);
    EXPECT_EQ(count[3], 1);
}

TEST(CostReport, HandCountOnChain)
{
    auto s = hand_chain(true, true);
    s.steps[0].macs = 11;
    s.steps[1].macs = 7;
    s.steps[2].macs = 5;
    const auto c = mcu::estimate_cost(s);
    EXPECT_EQ(c.total_macs, 23u);
    EXPECT_EQ(c.parameter_bytes, 380u);
    EXPECT_EQ(c.spill_store_bytes, 480u);
    EXPECT_EQ(c.spill_reload_bytes, 480u);
    EXPECT_EQ(c.flash_traffic_bytes, 380u + 960u);
    EXPECT_EQ(c.step_flash_bytes, (std::vector<std::size_t>{680, 120, 540}));
}

TEST(CostReport, DenseMacs)
{
    nn::Model m(nn::ModelSpec{10, 1, {nn::LayerSpec::dense(5)}});
    EXPECT_EQ(mcu::layer_macs(m.layers()[0]), 50u);
    nn::Model conv(nn::ModelSpec{3, 16, {nn::LayerSpec::conv(4, 5)}});
    EXPECT_EQ(mcu::layer_macs(conv.layers()[0]), 4u * 16u * 3u * 5u);
}

TEST(BuildSchedule, WithoutAggregationIsThePlainLayerSequence)
{
    const auto c = perturbed_composite(false, 1);
    const auto s = mcu::build_schedule(c, 1, false);
    EXPECT_EQ(s.steps.size(), c.selector.layers().size() + c.classifiers[1].layers().size());
    EXPECT_TRUE(s.tap_buffers.empty());
    EXPECT_TRUE(s.spill_set().empty());
    for (const auto& step : s.steps) EXPECT_EQ(step.inputs.size(), 1u);
    EXPECT_EQ(mcu::build_schedule(c, 1, true).steps.size(), s.steps.size());
}

TEST(BuildSchedule, UnslicedRetainsTwoTapsUntilTheClassifier)
{
    const auto c = perturbed_composite(true, 2);
    const auto s = mcu::build_schedule(c, 0, false);
    ASSERT_EQ(s.tap_buffers.size(), 2u);
    EXPECT_TRUE(s.spill_set().empty());
    const auto t = mcu::simulate_memory(s);
    for (std::size_t tap : s.tap_buffers) {
        std::size_t consumer = 0;
        for (const auto& step : s.steps) {
            if (step.inputs.size() == 2 && step.inputs[1] == tap) consumer = step.id;
        }
        ASSERT_GT(consumer, 0u);
        EXPECT_EQ(s.steps[consumer].network, mcu::Network::Classifier);
        int residencies = 0;
        for (const auto& l : t.lifetimes) {
            if (l.buffer != tap) continue;
            ++residencies;
            EXPECT_EQ(l.freed_after, consumer);
        }
        EXPECT_EQ(residencies, 1);
    }
}

TEST(BuildSchedule, SlicedSpillsEachTapOnceAndHasSixSlices)
{
    const auto c = perturbed_composite(true, 3);
    const auto s = mcu::build_schedule(c, 2, true);
    EXPECT_EQ(s.slice_count(), 6u);
    auto taps = s.tap_buffers;
    std::sort(taps.begin(), taps.end());
    EXPECT_EQ(s.spill_set(), taps);
    for (std::size_t tap : taps) {
        int reloads = 0;
        for (const auto& step : s.steps) reloads += static_cast<int>(std::count(step.load_from_flash.begin(), step.load_from_flash.end(), tap));
        EXPECT_EQ(reloads, 1);
    }
}

TEST(BuildSchedule, RejectsBadClassifierIndex)
{
    const auto c = perturbed_composite(true, 4);
    EXPECT_THROW(mcu::build_schedule(c, 3, false), std::out_of_range);
}

TEST(ExecuteSchedule, SlicedAndUnslicedMatchTheMonolithicForward)
{
    for (bool aggregation : {true, false}) {
        const auto c = perturbed_composite(aggregation, 5);
        std::mt19937_64 rng(9);
        for (std::size_t k = 0; k < c.size(); ++k) {
            const auto plain = mcu::build_schedule(c, k, false);
            const auto sliced = mcu::build_schedule(c, k, true);
            for (int trial = 0; trial < 5; ++trial) {
                const auto x = random_input(rng, c.selector.input_shape());
                mcu::FlashStore f1;
                mcu::FlashStore f2;
                const auto a = mcu::execute_schedule(c, plain, x, f1);
                const auto b = mcu::execute_schedule(c, sliced, x, f2);
                const auto ref = model::forward_with_aggregation(c, x, k);
                EXPECT_EQ(a.classifier_logits, ref.classifier_logits);
                EXPECT_EQ(b.classifier_logits, ref.classifier_logits);
                EXPECT_EQ(a.selector_logits, ref.selector_logits);
                EXPECT_EQ(b.selector_logits, ref.selector_logits);
            }
        }
    }
}

TEST(ExecuteSchedule, FlashHoldsExactlyTheTapsThenEmpties)
{
    const auto c = perturbed_composite(true, 6);
    const auto s = mcu::build_schedule(c, 1, true);
    mcu::FlashStore flash;
    std::mt19937_64 rng(1);
    mcu::execute_schedule(c, s, random_input(rng, c.selector.input_shape()), flash);
    EXPECT_EQ(flash.size(), 0u);
    std::vector<std::string> stored;
    std::vector<std::string> loaded;
    for (const auto& e : flash.events()) (e.store ? stored : loaded).push_back(e.key);
    ASSERT_EQ(stored.size(), 2u);
    EXPECT_EQ(stored, loaded);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(stored[i], mcu::flash_key(s.buffers[s.tap_buffers[i]]));
}

TEST(ExecuteSchedule, FileBackedFlashGivesTheSameLogits)
{
    const auto c = perturbed_composite(true, 7);
    const auto s = mcu::build_schedule(c, 0, true);
    const auto dir = std::filesystem::temp_directory_path() / "ditmos_flash_test";
    std::filesystem::remove_all(dir);
    mcu::FlashStore disk(dir);
    mcu::FlashStore ram;
    std::mt19937_64 rng(2);
    const auto x = random_input(rng, c.selector.input_shape());
    EXPECT_EQ(mcu::execute_schedule(c, s, x, disk).classifier_logits,
              mcu::execute_schedule(c, s, x, ram).classifier_logits);
    EXPECT_TRUE(std::filesystem::is_empty(dir));
    std::filesystem::remove_all(dir);
}

TEST(ExecuteSchedule, MissingFlashEntryThrows)
{
    mcu::FlashStore flash;
    EXPECT_THROW(flash.take("nope"), std::out_of_range);
}

TEST(SlicingProperties, PeakAndTrafficAccounting)
{
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto c = perturbed_composite(true, seed);
        const auto plain = mcu::build_schedule(c, seed % 3, false);
        const auto sliced = mcu::build_schedule(c, seed % 3, true);
        const auto tp = mcu::simulate_memory(plain);
        const auto ts = mcu::simulate_memory(sliced);
        EXPECT_LE(ts.peak_bytes, tp.peak_bytes);
        std::size_t tap_bytes = 0;
        for (std::size_t b : plain.tap_buffers) tap_bytes += plain.buffers[b].bytes;
        EXPECT_EQ(mcu::estimate_cost(sliced).flash_traffic_bytes - mcu::estimate_cost(plain).flash_traffic_bytes,
                  2 * tap_bytes);
        EXPECT_EQ(mcu::estimate_cost(sliced).total_macs, mcu::estimate_cost(plain).total_macs);
    }
}

TEST(SlicingProperties, DefaultCompositePeakDropsWithSlicing)
{
    const auto arch = model::ArchitectureSpec::defaults(3, 128, 8, 6);
    const auto c = model::build_composite(arch, true, 11);
    const auto plain = mcu::simulate_memory(mcu::build_schedule(c, 0, false));
    const auto sliced = mcu::simulate_memory(mcu::build_schedule(c, 0, true));
    EXPECT_LT(sliced.peak_bytes, plain.peak_bytes);
}

TEST(Reports, JsonAndCsvCarryTheSameNumbers)
{
    const auto t = mcu::simulate_memory(hand_chain(true, false));
    const auto j = t.to_json();
    EXPECT_EQ(j["peak_bytes"].get<std::size_t>(), 1880u);
    EXPECT_EQ(j["steps"].size(), 3u);
    EXPECT_EQ(t.to_csv(), "step,live_bytes,activation_bytes\n0,1880,1680\n1,1720,1600\n2,900,840\n");
    const auto c = mcu::estimate_cost(hand_chain(false, false));
    EXPECT_EQ(c.to_json()["flash_traffic_bytes"].get<std::size_t>(), 380u);
}

}  // namespace
