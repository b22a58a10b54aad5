#include "gridnse/matpower.hpp"

#include <iostream>

// Converts MATPOWER-style case data to the native case format:
//   gridnse-case-convert input.m output.case
int main(int argc, char** argv) {
    if (argc != 3) {
        std::cerr << "usage: gridnse-case-convert <matpower.m> <output.case>\n";
        return 2;
    }
    try {
        const gridnse::CaseData data = gridnse::load_matpower_file(argv[1]);
        gridnse::save_case_file(data, argv[2]);
        std::cout << "wrote " << argv[2] << ": " << data.system.bus_count() << " buses, "
                  << data.system.branch_count() << " branches, " << data.loads.size()
                  << " loads, " << data.generators.size() << " generators\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
