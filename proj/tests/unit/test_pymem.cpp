/*
 * Copyright 2026 The jobjail Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "jobjail/error.hpp"
#include "jobjail/pymem.hpp"
#include "pymem_reference.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <functional>

using namespace jobjail;
using namespace jobjail::pymem;

namespace {

AllocTrace allocs(std::size_t n, std::uint64_t size, bool tracked)
{
    std::vector<Event> ev(n, Event{Op::Alloc, size, tracked, 0});
    return AllocTrace(ev);
}

ErrorKind kind_of(const std::function<void()>& f)
{
    try
    {
        f();
    }
    catch (const Error& e)
    {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::Usage;
}

} // namespace

TEST(ObjectSize, DefaultTableHasTheIntegerClasses)
{
    auto t = SizeTable::defaults();
    EXPECT_EQ(object_size("integer:large", t), 32u);
    EXPECT_EQ(object_size("integer:small", t), 28u);
    EXPECT_EQ(kind_of([&] { object_size("foo", t); }), ErrorKind::UnknownDescriptor);
}

TEST(ObjectSize, TableFileAddsAndOverrides)
{
    auto t = SizeTable::load(testing_support::data_dir() / "sizes.table");
    EXPECT_EQ(object_size("float", t), 24u);
    EXPECT_EQ(object_size("str:empty", t), 49u);
    EXPECT_EQ(object_size("integer:large", t), 32u);
    EXPECT_THROW(SizeTable::parse("x=0\n"), Error);
    EXPECT_THROW(SizeTable::parse("novalue\n"), Error);
}

TEST(Trace, ParsesClassesAndIndices)
{
    auto sizes = SizeTable::load(testing_support::data_dir() / "sizes.table");
    auto t = AllocTrace::load(testing_support::data_dir() / "small.trace", sizes);
    ASSERT_EQ(t.size(), 4u);
    EXPECT_EQ(t.at(1).size_bytes, 28u);
    EXPECT_TRUE(t.at(1).gc_tracked);
    EXPECT_EQ(t.at(2).size_bytes, 24u);
    EXPECT_EQ(t.at(4).op, Op::Free);
    EXPECT_EQ(t.at(4).target, 2u);
    EXPECT_EQ(t.at(4).size_bytes, 24u);
    EXPECT_EQ(AllocTrace::parse(t.to_text()).events(), t.events());
}

TEST(Trace, MalformedInputs)
{
    EXPECT_EQ(kind_of([] { AllocTrace::parse("free,1\n"); }), ErrorKind::MalformedTrace);
    EXPECT_EQ(kind_of([] { AllocTrace::parse("alloc,8,0\nfree,1\nfree,1\n"); }), ErrorKind::MalformedTrace);
    EXPECT_EQ(kind_of([] { AllocTrace::parse("alloc,8,0\nfree,3\n"); }), ErrorKind::MalformedTrace);
    EXPECT_EQ(kind_of([] { AllocTrace::parse("alloc,8,0\nfree,2\n"); }), ErrorKind::MalformedTrace);
    EXPECT_EQ(kind_of([] { AllocTrace::parse("alloc,0,0\n"); }), ErrorKind::MalformedTrace);
    EXPECT_EQ(kind_of([] { AllocTrace::parse("alloc,8,2\n"); }), ErrorKind::MalformedTrace);
    EXPECT_EQ(kind_of([] { AllocTrace::parse("realloc,8\n"); }), ErrorKind::MalformedTrace);
    EXPECT_EQ(kind_of([] { AllocTrace::parse("alloc,bogus:class,0\n"); }), ErrorKind::UnknownDescriptor);
}

TEST(Config, Invariants)
{
    EXPECT_NO_THROW(ArenaConfig{}.validate());
    EXPECT_THROW((ArenaConfig{512, 512}).validate(), Error);
    EXPECT_THROW((ArenaConfig{4096, 0}).validate(), Error);
    EXPECT_THROW((GcConfig{{700, 0, 10}}).validate(), Error);
    EXPECT_THROW((GcConfig{{}}).validate(), Error);
}

TEST(Simulate, LargeObjectsGoToTheHeap)
{
    auto est = simulate(allocs(1000, 600, false));
    EXPECT_EQ(est.direct_heap_bytes, 600000u);
    EXPECT_EQ(est.arena_count_peak, 0u);
    EXPECT_EQ(est.peak_bytes, 600000u);
}

TEST(Simulate, OneSmallObjectReservesAWholeArena)
{
    auto trace = allocs(1, 100, false);
    auto est = simulate(trace);
    EXPECT_EQ(est.arena_count_peak, 1u);
    EXPECT_EQ(est.peak_bytes, 262144u);
    EXPECT_EQ(est, oracle::reference_simulate(trace, {}, {}));
}

TEST(Simulate, ThresholdIsInclusiveForArenas)
{
    auto est = simulate(allocs(1, 512, false));
    EXPECT_EQ(est.arena_count_peak, 1u);
    EXPECT_EQ(est.direct_heap_bytes, 0u);
}

TEST(Simulate, ArenaReleasedOnlyWhenEmptyAndReusedFirstFit)
{
    // Arena of 1024 with threshold 512: two 400-byte objects share arena 0,
    // the third opens arena 1; freeing one of the first two keeps arena 0.
    std::vector<Event> ev{{Op::Alloc, 400, false, 0}, {Op::Alloc, 400, false, 0}, {Op::Alloc, 400, false, 0},
                          {Op::Free, 0, false, 1},    {Op::Alloc, 200, false, 0}, {Op::Free, 0, false, 3}};
    AllocTrace t(ev);
    std::vector<std::uint64_t> reserved;
    auto est = simulate(t, {1024, 512}, {}, [&](const StepState& s) { reserved.push_back(s.arena_reserved_bytes); });
    EXPECT_EQ(reserved, (std::vector<std::uint64_t>{1024, 1024, 2048, 2048, 2048, 1024}));
    EXPECT_EQ(est.arena_count_peak, 2u);
    EXPECT_EQ(est.arena_count_end, 1u);
    EXPECT_EQ(est.live_bytes_end, 600u);
}

TEST(Simulate, InterleavedTenThousandEventsMatchReference)
{
    std::mt19937_64 rng(7);
    auto trace = oracle::random_trace(rng, 10000);
    for (auto arena : {ArenaConfig{}, ArenaConfig{4096, 512}, ArenaConfig{1024, 256}})
        EXPECT_EQ(simulate(trace, arena, {}), oracle::reference_simulate(trace, arena, {}));
}

TEST(Simulate, Deterministic)
{
    std::mt19937_64 rng(11);
    auto trace = oracle::random_trace(rng, 5000);
    EXPECT_EQ(simulate(trace), simulate(trace));
}

TEST(Simulate, ConservationAtEveryStep)
{
    std::mt19937_64 rng(3);
    for (double tracked : {0.0, 0.5})
    {
        auto trace = oracle::random_trace(rng, 4000, 2048, 0.45, tracked);
        std::uint64_t unfreed = 0;
        std::size_t step = 0;
        simulate(trace, {4096, 512}, {{50, 5, 5}}, [&](const StepState& s) {
            const auto& e = trace.at(++step);
            if (e.op == Op::Alloc)
                unfreed += e.size_bytes;
            else
                unfreed -= e.size_bytes;
            if (tracked == 0.0)
                ASSERT_EQ(s.live_bytes, unfreed) << "step " << step;
            else
                ASSERT_GE(s.live_bytes, unfreed) << "step " << step;
            ASSERT_GE(s.arena_reserved_bytes, s.live_small_bytes);
            ASSERT_EQ(s.live_bytes, s.live_small_bytes + s.direct_heap_bytes);
        });
    }
}

TEST(Simulate, RaisingTheThresholdNeverGrowsTheHeap)
{
    std::mt19937_64 rng(5);
    for (int i = 0; i < 20; ++i)
    {
        auto trace = oracle::random_trace(rng, 3000);
        std::uint64_t prev = UINT64_MAX;
        for (std::uint64_t thr : {16, 64, 128, 256, 512, 1024, 2048, 4096})
        {
            auto est = simulate(trace, {8192, thr}, {});
            EXPECT_LE(est.direct_heap_bytes, prev) << "threshold " << thr;
            prev = est.direct_heap_bytes;
        }
    }
}

TEST(GcRounds, SevenHundredAllocsDoNotExceed)
{
    auto out = gc_rounds(allocs(700, 28, true));
    EXPECT_EQ(out.rounds, (std::vector<std::uint64_t>{0, 0, 0}));
    EXPECT_TRUE(out.schedule.empty());
    EXPECT_EQ(out.surviving_objects, (std::vector<std::uint64_t>{700, 0, 0}));
}

TEST(GcRounds, SevenHundredAndOneTriggerGenerationZero)
{
    auto out = gc_rounds(allocs(701, 28, true));
    EXPECT_EQ(out.rounds, (std::vector<std::uint64_t>{1, 0, 0}));
    ASSERT_EQ(out.schedule.size(), 1u);
    EXPECT_EQ(out.schedule[0], (GcRound{701, 0}));
    EXPECT_EQ(out.surviving_objects, (std::vector<std::uint64_t>{0, 701, 0}));
}

TEST(GcRounds, PromotedCountersCascade)
{
    // The 702nd alloc finds generation 1 holding 701 > 10 objects.
    auto out = gc_rounds(allocs(702, 28, true));
    EXPECT_EQ(out.schedule, (std::vector<GcRound>{{701, 0}, {702, 1}}));
    EXPECT_EQ(out.surviving_objects, (std::vector<std::uint64_t>{1, 0, 701}));
}

TEST(GcRounds, EmptyTrace)
{
    auto out = gc_rounds(AllocTrace{});
    EXPECT_TRUE(out.schedule.empty());
    EXPECT_EQ(out.rounds, (std::vector<std::uint64_t>{0, 0, 0}));
}

TEST(GcRounds, UntrackedEventsAreIgnored)
{
    EXPECT_TRUE(gc_rounds(allocs(5000, 28, false)).schedule.empty());
}

TEST(GcRounds, CollectionFreesMarkedObjects)
{
    std::vector<Event> ev{{Op::Alloc, 100, true, 0}, {Op::Free, 0, false, 1}, {Op::Alloc, 100, true, 0},
                          {Op::Alloc, 100, true, 0}};
    AllocTrace t(ev);
    std::vector<std::uint64_t> live;
    auto est = simulate(t, {}, {{2, 10, 10}}, [&](const StepState& s) { live.push_back(s.live_bytes); });
    // The free at event 2 only marks; the round at event 4 releases it.
    EXPECT_EQ(live, (std::vector<std::uint64_t>{100, 100, 200, 200}));
    EXPECT_EQ(est.gc.schedule, (std::vector<GcRound>{{4, 0}}));
    EXPECT_EQ(est.gc.surviving_objects, (std::vector<std::uint64_t>{0, 2, 0}));
    EXPECT_EQ(est.live_bytes_end, 200u);
    EXPECT_EQ(est.peak_bytes, 262144u);
}

TEST(GcRounds, AgreesWithSimulateAndReference)
{
    std::mt19937_64 rng(99);
    for (int i = 0; i < 50; ++i)
    {
        auto trace = oracle::random_trace(rng, 1 + rng() % 10000);
        GcConfig gc{{1 + rng() % 800, 1 + rng() % 12, 1 + rng() % 12}};
        auto fast = gc_rounds(trace, gc);
        EXPECT_EQ(fast, simulate(trace, {}, gc).gc);
        EXPECT_EQ(fast, oracle::reference_gc_rounds(trace, gc));
    }
}

TEST(Json, ReportShape)
{
    auto est = simulate(allocs(701, 28, true));
    auto j = to_json(est, {}, {});
    EXPECT_EQ(j["gc"]["schedule"][0]["event"], 701);
    EXPECT_EQ(j["peak_bytes"], est.peak_bytes);
    EXPECT_EQ(j["config"]["gc_thresholds"], (std::vector<std::uint64_t>{700, 10, 10}));
}
