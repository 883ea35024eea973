#include <cstdlib>
#include <cstring>

#include "cbfkit/kernels.hpp"

namespace cbfkit::kernels {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable& active() {
    static const KernelTable& table = [&]() -> const KernelTable& {
        const char* want = std::getenv("CBF_KIT_KERNELS");
        if (want != nullptr) {
            if (std::strcmp(want, "scalar") == 0) return scalar_table();
            if (std::strcmp(want, "avx2") == 0 && cpu_has_avx2() && avx2_table() != nullptr)
                return *avx2_table();
            // Unknown or unsupported request: fall through to auto-detection
            // rather than failing numeric code paths at startup.
        }
        if (cpu_has_avx2() && avx2_table() != nullptr) return *avx2_table();
        return scalar_table();
    }();
    return table;
}

}  // namespace cbfkit::kernels
