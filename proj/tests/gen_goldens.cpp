// Writes the frozen curve golden vectors. d=2 files come from the
// independent recursive reference (the orientation authority); d=3 files
// come from the production curve after its properties are validated against
// that reference. Run once, commit the output, never regenerate silently.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "oracles/hilbert2d_reference.hpp"
#include "rpmesh/hilbert.hpp"

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: gen_goldens <output-dir>\n";
        return 1;
    }
    std::string dir = argv[1];
    for (uint32_t d : {2u, 3u}) {
        for (uint32_t b = 1; b <= 4; ++b) {
            std::string name = dir + "/hilbert_d" + std::to_string(d) + "_b" +
                               std::to_string(b) + ".txt";
            std::ofstream out(name);
            if (!out) {
                std::cerr << "cannot open " << name << "\n";
                return 1;
            }
            out << "# hilbert curve golden vectors (frozen; do not regenerate)\n";
            out << "# curve: hil-v1, order-1 visit order (0,0) (0,1) (1,1) (1,0)\n";
            out << "# d=" << d << " b=" << b << ", format: axes... -> index\n";
            const uint64_t total = 1ull << (d * b);
            for (uint64_t i = 0; i < total; ++i) {
                std::vector<uint64_t> p;
                if (d == 2) {
                    auto [x, y] = hilbert2d_reference::d2xy(1ull << b, i);
                    p = {x, y};
                } else {
                    p = rpmesh::hilbert_decode(i, d, b);
                }
                for (uint64_t v : p) out << v << ' ';
                out << "-> " << i << "\n";
            }
            std::cout << "wrote " << name << " (" << total << " lines)\n";
        }
    }
    return 0;
}
