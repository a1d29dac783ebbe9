/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#include "scamap/aes128.hpp"
#include "scamap/error.hpp"
#include "scamap/rng.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

using namespace scamap;

TEST_CASE("s-box matches its algebraic definition on all 256 entries") {
    for (int v = 0; v < 256; ++v)
        CHECK(aes::sbox(static_cast<std::uint8_t>(v)) ==
              oracle::sbox_algebraic(static_cast<std::uint8_t>(v)));
}

TEST_CASE("s-box spot values") {
    CHECK(aes::sbox(0x00) == 0x63);
    CHECK(aes::sbox(0x53) == 0xED);
    CHECK(aes::sbox(0x52) == 0x00); // the only zero output
    CHECK(aes::sbox(0xFF) == 0x16);
    int zeros = 0;
    for (int v = 0; v < 256; ++v)
        zeros += aes::sbox(static_cast<std::uint8_t>(v)) == 0 ? 1 : 0;
    CHECK(zeros == 1);
}

TEST_CASE("s-box is a bijection") {
    std::array<bool, 256> seen{};
    for (int v = 0; v < 256; ++v)
        seen[aes::sbox(static_cast<std::uint8_t>(v))] = true;
    for (bool s : seen)
        CHECK(s);
}

TEST_CASE("first-round labels match byte-wise recomputation on 1000 random pairs") {
    SplitMix64 rng(0xAE5);
    for (int trial = 0; trial < 1000; ++trial) {
        aes::PlaintextBytes pt;
        aes::KeyBytes key;
        for (int b = 0; b < 16; ++b) {
            pt[static_cast<std::size_t>(b)] = rng.next_byte();
            key[static_cast<std::size_t>(b)] = rng.next_byte();
        }
        const auto labels = aes::first_round_labels(pt, key);
        for (int b = 0; b < 16; ++b) {
            const auto expect = oracle::sbox_algebraic(
                static_cast<std::uint8_t>(pt[static_cast<std::size_t>(b)] ^
                                          key[static_cast<std::size_t>(b)]));
            CHECK(labels[static_cast<std::size_t>(b)] == expect);
        }
    }
}

TEST_CASE("hypothesis class equals the label under the true key guess") {
    SplitMix64 rng(0x9);
    for (int t = 0; t < 256; ++t) {
        const auto pt = rng.next_byte();
        const auto k = rng.next_byte();
        CHECK(aes::hypothesis_class(pt, k) ==
              aes::sbox(static_cast<std::uint8_t>(pt ^ k)));
    }
}

TEST_CASE("hamming weight matches a bit loop on all bytes") {
    for (int v = 0; v < 256; ++v)
        CHECK(aes::hamming_weight(static_cast<std::uint8_t>(v)) ==
              oracle::popcount_loop(static_cast<std::uint8_t>(v)));
}

TEST_CASE("default key is the 0x00,0x11,...,0xFF pattern") {
    const auto key = aes::default_key();
    for (int b = 0; b < 16; ++b)
        CHECK(key[static_cast<std::size_t>(b)] == static_cast<std::uint8_t>(b * 0x11));
}

TEST_CASE("key hex round trip") {
    const auto key = aes::default_key();
    const std::string hex = aes::key_to_hex(key);
    CHECK(hex == "00112233445566778899aabbccddeeff");
    CHECK(aes::key_from_hex(hex) == key);
    CHECK(aes::key_from_hex("00112233445566778899AABBCCDDEEFF") == key);
}

TEST_CASE("bad key hex is a config error") {
    CHECK_THROWS_AS(aes::key_from_hex("00ff"), Error);
    CHECK_THROWS_AS(aes::key_from_hex(std::string(32, 'g')), Error);
    try {
        aes::key_from_hex("xx");
        FAIL("expected a throw");
    } catch (const Error &e) {
        CHECK(e.kind() == ErrorKind::Config);
    }
}
