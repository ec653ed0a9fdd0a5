// Regenerates the shipped route table files from the built-in geometry.
#include <iostream>

#include "ccoma/envs/traffic.hpp"

int main(int argc, char** argv) {
    if (argc != 3) {
        std::cerr << "usage: gen_routes <easy|hard> <output-file>\n";
        return 2;
    }
    try {
        const auto mode = ccoma::traffic::mode_from_string(argv[1]);
        const auto table = ccoma::traffic::builtin_routes(mode);
        ccoma::traffic::save_route_table(
            argv[2], table,
            "mode=" + std::string(argv[1]) + " rows=" + std::to_string(table.rows) +
                " cols=" + std::to_string(table.cols));
        std::cout << "wrote " << table.routes.size() << " routes to " << argv[2] << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
