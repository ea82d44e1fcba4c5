#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

// Exit-code contract of the command line binary: 0 ok, 1 usage, 2 data, 3
// numeric failure.

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(STRKIT_BIN) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

} // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(run("definitely-not-a-subcommand") == 1);
    CHECK(run("train") == 1);                      // missing required flags
    CHECK(run("report --recipe no-such-recipe --out /tmp/strkit_cli_x") == 1);
}

TEST_CASE("data errors exit with 2") {
    CHECK(run("hash /no/such/file.jsonl") == 2);
    CHECK(run("mine-tokens --base /no/such/dir --out /tmp/strkit_cli_t.json") == 2);
}

TEST_CASE("hash prints content hashes and exits 0") {
    const auto path = std::filesystem::temp_directory_path() / "strkit_cli_hash.txt";
    std::ofstream(path) << "hello\n";
    CHECK(run("hash " + path.string()) == 0);
    std::filesystem::remove(path);
}

TEST_CASE("version flag works") { CHECK(run("--version") == 0); }

TEST_CASE("the scalar kernel override is honored end to end") {
    const auto path = std::filesystem::temp_directory_path() / "strkit_cli_hash2.txt";
    std::ofstream(path) << "payload\n";
    const std::string cmd = std::string("STRKIT_KERNELS=scalar ") + STRKIT_BIN + " hash " +
                            path.string() + " >/dev/null 2>&1";
    CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    std::filesystem::remove(path);
}
