#include <doctest.h>

#include "lrt/config.hpp"

using namespace lrt;

TEST_SUITE("config") {
  TEST_CASE("key value parsing") {
    const KeyValues kv = parse_key_values("# comment\n a = 1 \n\nb=two words\n");
    REQUIRE(kv.size() == 2);
    CHECK(kv[0] == std::pair<std::string, std::string>{"a", "1"});
    CHECK(*find_value(kv, "b") == "two words");
    CHECK(find_value(kv, "c") == nullptr);
    CHECK_THROWS(parse_key_values("a=1\na=2\n"));
    CHECK_THROWS(parse_key_values("novalue\n"));
    CHECK_THROWS(parse_key_values("=1\n"));
    CHECK(parse_key_values(format_key_values(kv)) == kv);
  }

  TEST_CASE("merging keeps order") {
    KeyValues kv{{"a", "1"}, {"b", "2"}};
    merge_key_values(kv, {{"b", "3"}, {"c", "4"}});
    CHECK(kv == KeyValues{{"a", "1"}, {"b", "3"}, {"c", "4"}});
  }

  TEST_CASE("hashing and dtype names") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
    CHECK(parse_dtype("f64") == DType::kF64);
    CHECK(dtype_name(DType::kF32) == "f32");
    CHECK_THROWS(parse_dtype("f16"));
  }
}
