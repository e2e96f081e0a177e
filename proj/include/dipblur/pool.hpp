#pragma once

#include <cstddef>
#include <new>
#include <unordered_map>
#include <vector>

namespace dipblur {

// Thread-local free lists keyed by exact allocation size. The optimization
// loop allocates the same set of activation buffers every iteration; handing
// pages back to the kernel each time makes minor faults the dominant cost on
// virtualized hosts, so freed buffers are kept warm here instead. Buffers
// must be freed on the thread that allocated them (runs are thread-confined).
template <class T>
class BufferPool {
public:
    static BufferPool& instance() {
        thread_local BufferPool pool;
        return pool;
    }

    T* take(std::size_t n) {
        auto it = lists_.find(n);
        if (it != lists_.end() && !it->second.empty()) {
            T* p = it->second.back();
            it->second.pop_back();
            return p;
        }
        return static_cast<T*>(::operator new(n * sizeof(T)));
    }

    void give(T* p, std::size_t n) { lists_[n].push_back(p); }

    ~BufferPool() {
        for (auto& [n, list] : lists_)
            for (T* p : list) ::operator delete(p);
    }

private:
    std::unordered_map<std::size_t, std::vector<T*>> lists_;
};

template <class T>
struct PoolAllocator {
    using value_type = T;

    PoolAllocator() = default;
    template <class U>
    PoolAllocator(const PoolAllocator<U>&) {}

    T* allocate(std::size_t n) { return BufferPool<T>::instance().take(n); }
    void deallocate(T* p, std::size_t n) { BufferPool<T>::instance().give(p, n); }

    bool operator==(const PoolAllocator&) const { return true; }
    bool operator!=(const PoolAllocator&) const { return false; }
};

template <class T>
using PooledBuffer = std::vector<T, PoolAllocator<T>>;

}  // namespace dipblur
