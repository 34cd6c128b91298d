#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "evflow/events.hpp"

using namespace evflow;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

EventStream make_stream(std::vector<Event> ev, int h = 8, int w = 8) {
    EventStream s;
    s.events = std::move(ev);
    s.sensor_h = h;
    s.sensor_w = w;
    return s;
}

}  // namespace

TEST_CASE("event file round trip preserves records and order") {
    EventStream s = make_stream({{1, 2, 10, +1}, {3, 4, 20, -1}, {5, 6, 30, +1}});
    std::string path = temp_path("evt_roundtrip.evt");
    save_events(path, s);
    EventStream r = load_events(path);
    REQUIRE(r.size() == 3);
    CHECK(r.sensor_w == 8);
    CHECK(r.sensor_h == 8);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(r.events[i].x == s.events[i].x);
        CHECK(r.events[i].y == s.events[i].y);
        CHECK(r.events[i].t == s.events[i].t);
        CHECK(r.events[i].p == s.events[i].p);
    }
}

TEST_CASE("empty event file yields an empty stream with header dims") {
    EventStream s = make_stream({}, 12, 34);
    std::string path = temp_path("evt_empty.evt");
    save_events(path, s);
    EventStream r = load_events(path);
    CHECK(r.empty());
    CHECK(r.sensor_h == 12);
    CHECK(r.sensor_w == 34);
}

TEST_CASE("unsorted timestamps are rejected with the record index") {
    EventStream s = make_stream({{0, 0, 5, 1}, {0, 0, 3, 1}, {0, 0, 7, 1}});
    std::string path = temp_path("evt_unsorted.evt");
    save_events(path, s);
    try {
        load_events(path);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    }
}

TEST_CASE("truncated record reports a byte offset") {
    EventStream s = make_stream({{0, 0, 5, 1}, {0, 0, 6, 1}});
    std::string path = temp_path("evt_trunc.evt");
    save_events(path, s);
    std::filesystem::resize_file(path, 16 + 16 + 5);  // header + one record + partial
    try {
        load_events(path);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("byte offset 32") != std::string::npos);
    }
}

TEST_CASE("csv loader parses t,x,y,p lines") {
    std::string path = temp_path("events.csv");
    {
        std::ofstream f(path);
        f << "10,1,2,1\n20,3,4,-1\n";
    }
    EventStream s = load_events_csv(path);
    REQUIRE(s.size() == 2);
    CHECK(s.events[1].p == -1);
    CHECK(s.events[1].t == 20);
}

TEST_CASE("slice_window") {
    EventStream s = make_stream({{0, 0, 10, 1}, {1, 1, 20, 1}, {2, 2, 30, 1}});
    SUBCASE("identity window") {
        EventStream r = slice_window(s, 0, 100);
        CHECK(r.size() == 3);
    }
    SUBCASE("empty window") { CHECK(slice_window(s, 40, 50).empty()); }
    SUBCASE("boundary inclusion") {
        EventStream r = slice_window(s, 15, 30);
        REQUIRE(r.size() == 2);
        CHECK(r.events[0].t == 20);
        CHECK(r.events[1].t == 30);
    }
    SUBCASE("bad bounds") { CHECK_THROWS_AS(slice_window(s, 30, 30), ValidationError); }
    SUBCASE("idempotent") {
        EventStream once = slice_window(s, 15, 30);
        EventStream twice = slice_window(once, 15, 30);
        CHECK(twice.size() == once.size());
    }
}

TEST_CASE("window_slices partitions without double counting") {
    EventStream s = make_stream({{0, 0, 0, 1}, {0, 0, 10, 1}, {0, 0, 19, 1}, {0, 0, 20, 1}, {0, 0, 40, 1}});
    auto parts = window_slices(s, {0, 20, 40});
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].size() == 3);  // t=0,10,19; t=20 belongs to the next window
    CHECK(parts[1].size() == 2);  // t=20 (left boundary), t=40 (final right boundary)
    size_t total = 0;
    for (const auto& p : parts) total += p.size();
    CHECK(total == s.size());
}

TEST_CASE("time surface") {
    SUBCASE("empty stream is all zero") {
        EventRepresentation r = build_time_surface(make_stream({}), 100, 50.0);
        CHECK(r.data.abs_max() == 0.0);
        CHECK(r.channels() == 2);
    }
    SUBCASE("event at t_ref has value one in its polarity channel") {
        EventRepresentation r = build_time_surface(make_stream({{3, 4, 100, +1}}), 100, 50.0);
        CHECK(r.data.at(4, 3, 0) == doctest::Approx(1.0));
        CHECK(r.data.at(4, 3, 1) == 0.0);
        double sum = 0;
        for (double v : r.data.data) sum += std::abs(v);
        CHECK(sum == doctest::Approx(1.0));
    }
    SUBCASE("age tau decays to exp(-1)") {
        EventRepresentation r = build_time_surface(make_stream({{2, 2, 50, -1}}), 100, 50.0);
        CHECK(r.data.at(2, 2, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    }
    SUBCASE("tau must be positive") {
        CHECK_THROWS_AS(build_time_surface(make_stream({}), 100, 0.0), ValidationError);
    }
    SUBCASE("values stay in [0,1] and decay as t_ref advances") {
        EventStream s = make_stream({{1, 1, 10, 1}, {5, 5, 40, -1}});
        EventRepresentation a = build_time_surface(s, 50, 30.0);
        EventRepresentation b = build_time_surface(s, 80, 30.0);
        for (int64_t i = 0; i < a.data.numel(); ++i) {
            CHECK(a.data.data[static_cast<size_t>(i)] >= 0.0);
            CHECK(a.data.data[static_cast<size_t>(i)] <= 1.0);
            CHECK(b.data.data[static_cast<size_t>(i)] <= a.data.data[static_cast<size_t>(i)] + 1e-15);
        }
    }
}

TEST_CASE("binned representation") {
    SUBCASE("empty stream is a zero 12-channel tensor") {
        EventRepresentation r = build_binned_representation(make_stream({}), 0, 120);
        CHECK(r.channels() == 12);
        CHECK(r.data.abs_max() == 0.0);
    }
    SUBCASE("event at the window start lands in bin zero") {
        EventRepresentation r = build_binned_representation(make_stream({{2, 3, 0, +1}}), 0, 120);
        CHECK(r.data.at(3, 2, 0) == doctest::Approx(1.0));
    }
    SUBCASE("event at the right boundary lands in the final bin") {
        EventRepresentation r = build_binned_representation(make_stream({{2, 3, 120, +1}}), 0, 120);
        CHECK(r.data.at(3, 2, 11) == doctest::Approx(1.0));
    }
    SUBCASE("opposite polarities cancel within a bin") {
        EventStream s = make_stream({{4, 4, 55, +1}, {4, 4, 56, -1}});
        EventRepresentation r = build_binned_representation(s, 0, 120);
        CHECK(r.data.at(4, 4, 5) == doctest::Approx(0.0));
    }
    SUBCASE("bad window bounds") {
        CHECK_THROWS_AS(build_binned_representation(make_stream({}), 10, 10), ValidationError);
    }
}

TEST_CASE("per-pixel absolute bin mass equals event count for unipolar pixels") {
    RandomStream rng(99);
    std::vector<Event> ev;
    std::vector<int> count(64, 0);
    for (int i = 0; i < 200; ++i) {
        int x = rng.uniform_int(8), y = rng.uniform_int(8);
        // one polarity per pixel so bins accumulate without cancellation
        int8_t p = static_cast<int8_t>(((x + y) % 2) * 2 - 1);
        ev.push_back({x, y, static_cast<int64_t>(rng.uniform_int(1000)), p});
        count[static_cast<size_t>(y * 8 + x)]++;
    }
    std::sort(ev.begin(), ev.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
    EventRepresentation r = build_binned_representation(make_stream(std::move(ev)), 0, 1000);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            double mass = 0.0;
            for (int c = 0; c < 12; ++c) mass += std::abs(r.data.at(y, x, c));
            CHECK(mass == doctest::Approx(count[static_cast<size_t>(y * 8 + x)]));
        }
}

TEST_CASE("stream validation catches bad coordinates and polarity") {
    EventStream bad_x = make_stream({{9, 0, 0, 1}});
    CHECK_THROWS_AS(validate_stream(bad_x), ValidationError);
    EventStream bad_p = make_stream({{0, 0, 0, 0}});
    CHECK_THROWS_AS(validate_stream(bad_p), ValidationError);
}
