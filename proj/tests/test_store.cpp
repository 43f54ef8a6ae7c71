#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "metrik/rng.hpp"
#include "metrik/store.hpp"
#include "test_util.hpp"

using namespace metrik;

TEST_CASE("artifact_id is a pure function of content and extension") {
    const std::string bytes = "hello artifact";
    const std::string id = artifact_id(bytes, ".json");
    CHECK(id == artifact_id(bytes, ".json"));
    CHECK(id != artifact_id(bytes, ".csv"));
    CHECK(id != artifact_id(bytes + "!", ".json"));

    // <16 hex digits>-<byte count><extension>
    const auto dash = id.find('-');
    REQUIRE(dash == 16);
    CHECK(id.substr(0, 16).find_first_not_of("0123456789abcdef") == std::string::npos);
    CHECK(id.substr(dash + 1) == std::to_string(bytes.size()) + ".json");

    // Matches the shared hash so ids can be computed without a store.
    char expected[17];
    std::snprintf(expected, sizeof expected, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    CHECK(id.substr(0, 16) == expected);
}

TEST_CASE("ArtifactStore put/get round-trips bytes and is idempotent") {
    testutil::TempDir dir("store");
    ArtifactStore store(dir.path());
    CHECK(store.root() == dir.path());

    const std::string bytes = "payload \x01\x02 with bytes\n";
    const std::string id = store.put(bytes, ".bin");
    CHECK(id == artifact_id(bytes, ".bin"));
    CHECK(store.contains(id));
    CHECK(store.get(id) == bytes);
    CHECK(std::filesystem::exists(store.path_of(id)));

    // Second put of identical content returns the same id without error.
    CHECK(store.put(bytes, ".bin") == id);
    CHECK(store.get(id) == bytes);

    CHECK_FALSE(store.contains("0000000000000000-3.bin"));
    CHECK_THROWS(store.get("0000000000000000-3.bin"));

    SUBCASE("a second store over the same root sees existing objects") {
        ArtifactStore other(dir.path());
        CHECK(other.contains(id));
        CHECK(other.get(id) == bytes);
    }
}

TEST_CASE("ArtifactStore key index maps cache keys to artifact ids") {
    testutil::TempDir dir("store_idx");
    ArtifactStore store(dir.path());
    const std::string id = store.put("cached result", ".json");

    CHECK_FALSE(store.lookup("train|fold0|e0.3").has_value());
    store.map_key("train|fold0|e0.3", id);
    const auto hit = store.lookup("train|fold0|e0.3");
    REQUIRE(hit.has_value());
    CHECK(*hit == id);
    CHECK_FALSE(store.lookup("train|fold0|e0.5").has_value());

    // Re-mapping the same key to the same id is a no-op.
    store.map_key("train|fold0|e0.3", id);
    CHECK(*store.lookup("train|fold0|e0.3") == id);

    SUBCASE("the index survives a reopen") {
        ArtifactStore other(dir.path());
        const auto again = other.lookup("train|fold0|e0.3");
        REQUIRE(again.has_value());
        CHECK(*again == id);
    }
}

TEST_CASE("write_file_bytes creates parents and read_file_bytes round-trips") {
    testutil::TempDir dir("files");
    const auto path = dir.path() / "a" / "b" / "data.bin";
    const std::string bytes("\x00\x01zz\n\x7f", 6);
    write_file_bytes(path, bytes);
    CHECK(read_file_bytes(path) == bytes);
    CHECK_THROWS(read_file_bytes(dir.path() / "missing.bin"));
}
