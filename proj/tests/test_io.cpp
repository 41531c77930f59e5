#include <gtest/gtest.h>

#include <sstream>

#include "spire/io.hpp"
#include "spire/simulation.hpp"

using namespace spire;

namespace {

std::string message_of(const std::string& csv) {
    std::istringstream is(csv);
    try {
        read_csv(is);
    } catch (const DataError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Csv, RoundTripIsExact) {
    Rng rng = substream(6, 0);
    const SimulatedData sim = generate_realistic(500, rng);
    std::stringstream ss;
    write_csv(ss, sim.data);
    const Dataset back = read_csv(ss);
    ASSERT_EQ(back.size(), sim.data.size());
    ASSERT_EQ(back.dim(), 3u);
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].y, sim.data[i].y);
        EXPECT_EQ(back[i].w, sim.data[i].w);
        EXPECT_EQ(back[i].delta, sim.data[i].delta);
        EXPECT_EQ(back[i].z, sim.data[i].z);
    }
}

TEST(Csv, Header) {
    std::ostringstream os;
    write_csv(os, Dataset({{1.5, 0.25, 1, {1.0, 2.0}}}));
    EXPECT_EQ(os.str(), "y,w,delta,z1,z2\n1.5,0.25,1,1,2\n");
}

TEST(Csv, Errors) {
    EXPECT_NE(message_of("y,w,delta,z1\n1,2,1,0\n1,2,1\n").find("line 3"), std::string::npos);
    EXPECT_NE(message_of("y,w,delta,z1\n1,2,2,0\n").find("line 2"), std::string::npos);
    EXPECT_NE(message_of("y,w,delta,z1\n1,abc,1,0\n").find("line 2"), std::string::npos);
    EXPECT_NE(message_of("y,x,delta\n1,2,1\n").find("line 1"), std::string::npos);
    EXPECT_NE(message_of("y,w,delta,z2\n1,2,1,0\n").find("z1"), std::string::npos);
    EXPECT_FALSE(message_of("").empty());
    EXPECT_FALSE(message_of("y,w,delta\n").empty());
    EXPECT_FALSE(message_of("y,w,delta\n1,2,0\n").empty());
}

TEST(Csv, ToleratesWhitespaceAndBlankLines) {
    std::istringstream is("y, w, delta, z1\r\n\n 1.0 ,0.5, 1 ,3\r\n2,0.7,0,4\n");
    const Dataset d = read_csv(is);
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d[0].z[0], 3.0);
    EXPECT_EQ(d[1].delta, 0);
}

TEST(Scaling, MinMaxOnSelectedColumns) {
    const Dataset d({{0.0, 2.0, 1, {10.0, 5.0}}, {0.0, 4.0, 0, {20.0, 6.0}}, {0.0, 3.0, 1, {15.0, 7.0}}});
    const Dataset s = scale_to_unit(d, {0});
    EXPECT_EQ(s[0].w, 0.0);
    EXPECT_EQ(s[1].w, 1.0);
    EXPECT_EQ(s[2].w, 0.5);
    EXPECT_EQ(s[2].z[0], 0.5);
    EXPECT_EQ(s[2].z[1], 7.0);
    EXPECT_THROW(scale_to_unit(d, {2}), ConfigError);
    const Dataset flat({{0.0, 1.0, 1, {1.0}}, {0.0, 1.0, 1, {2.0}}});
    EXPECT_THROW(scale_to_unit(flat, {}), DataError);
}

TEST(FormatDouble, RoundTrips) {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789}) EXPECT_EQ(std::stod(format_double(v)), v);
}
