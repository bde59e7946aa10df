#include "ppml/lru_cache.hpp"

#include <gtest/gtest.h>

#include <list>
#include <random>

namespace ppml {
namespace {

TEST(LruCache, EvictsLeastRecentlyUsed) {
    LruCache<int, int> cache(2);
    cache.put(1, 10);
    cache.put(2, 20);
    ASSERT_NE(cache.get(1), nullptr);  // 1 is now most recent
    auto evicted = cache.put(3, 30);
    ASSERT_TRUE(evicted.has_value());
    EXPECT_EQ(*evicted, 2);
    EXPECT_TRUE(cache.contains(1));
    EXPECT_FALSE(cache.contains(2));
    EXPECT_EQ(cache.size(), 2u);
}

TEST(LruCache, ZeroCapacityStoresNothing) {
    LruCache<int, int> cache(0);
    EXPECT_FALSE(cache.put(1, 1).has_value());
    EXPECT_EQ(cache.get(1), nullptr);
    EXPECT_EQ(cache.size(), 0u);
}

TEST(LruCache, ReplaceRefreshesRecency) {
    LruCache<int, int> cache(2);
    cache.put(1, 1);
    cache.put(2, 2);
    cache.put(1, 100);
    EXPECT_EQ(*cache.lru_candidate(), 2);
    EXPECT_EQ(*cache.get(1), 100);
}

// Model check against a plain list kept in recency order.
TEST(LruCache, MatchesReferenceModel) {
    std::mt19937 rng(3);
    for (std::size_t cap : {1u, 3u, 8u}) {
        LruCache<int, int> cache(cap);
        std::list<std::pair<int, int>> model;
        for (int step = 0; step < 5000; ++step) {
            int key = static_cast<int>(rng() % 12);
            auto it = std::find_if(model.begin(), model.end(), [&](auto& p) { return p.first == key; });
            if (rng() % 2) {
                const int* got = cache.get(key);
                if (it == model.end()) {
                    ASSERT_EQ(got, nullptr);
                } else {
                    ASSERT_NE(got, nullptr);
                    ASSERT_EQ(*got, it->second);
                    model.splice(model.begin(), model, it);
                }
            } else {
                int value = static_cast<int>(rng());
                cache.put(key, value);
                if (it != model.end()) model.erase(it);
                model.emplace_front(key, value);
                if (model.size() > cap) model.pop_back();
            }
            ASSERT_EQ(cache.size(), model.size());
            ASSERT_LE(cache.size(), cap);
        }
    }
}

}  // namespace
}  // namespace ppml
