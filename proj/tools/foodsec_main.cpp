#include <cstdio>

#include "foodsec/version.hpp"

int main() {
    std::printf("foodsec %s\n", foodsec::version());
    return 0;
}
