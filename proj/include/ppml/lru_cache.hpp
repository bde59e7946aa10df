#pragma once

#include <cstddef>
#include <list>
#include <optional>
#include <unordered_map>
#include <utility>

namespace ppml {

/// Fixed-capacity least-recently-used map. Capacity 0 stores nothing.
/// The most recently used entry is at the front of the list.
template <class Key, class Value, class Hash = std::hash<Key>>
class LruCache {
public:
    explicit LruCache(std::size_t capacity) : capacity_(capacity) {}

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return map_.size(); }
    bool contains(const Key& key) const { return map_.count(key) != 0; }

    /// Returns the cached value and marks it most recently used.
    const Value* get(const Key& key) {
        auto it = map_.find(key);
        if (it == map_.end()) return nullptr;
        order_.splice(order_.begin(), order_, it->second);
        return &it->second->second;
    }

    /// Inserts or replaces. Returns the evicted key, if any.
    std::optional<Key> put(const Key& key, Value value) {
        if (capacity_ == 0) return std::nullopt;
        if (auto it = map_.find(key); it != map_.end()) {
            it->second->second = std::move(value);
            order_.splice(order_.begin(), order_, it->second);
            return std::nullopt;
        }
        std::optional<Key> evicted;
        if (map_.size() >= capacity_) {
            evicted = order_.back().first;
            map_.erase(order_.back().first);
            order_.pop_back();
        }
        order_.emplace_front(key, std::move(value));
        map_.emplace(key, order_.begin());
        return evicted;
    }

    void erase(const Key& key) {
        if (auto it = map_.find(key); it != map_.end()) {
            order_.erase(it->second);
            map_.erase(it);
        }
    }

    void clear() noexcept {
        map_.clear();
        order_.clear();
    }

    /// Key that the next insertion into a full cache would evict.
    const Key* lru_candidate() const { return order_.empty() ? nullptr : &order_.back().first; }

private:
    using Entry = std::pair<Key, Value>;

    std::size_t capacity_;
    std::list<Entry> order_;
    std::unordered_map<Key, typename std::list<Entry>::iterator, Hash> map_;
};

}  // namespace ppml
