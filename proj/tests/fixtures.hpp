#pragma once

#include "epibias/ingest.hpp"

#include <Eigen/Dense>

namespace epibias::testing {

/// Five provinces, two days of flows. All intermediate values are dyadic rationals, so the
/// pipeline is exact in binary floating point. After averaging and zeroing the diagonal
/// every row sums to 2; the symmetrized upper triangle holds eight positive weights
/// {1/2, 1/4, 1/16, 3/16, 1/4, 3/16, 1/2, 9/16}, ceil(0.2 * 8) = 2 are kept and the tie
/// at 1/2 keeps a third.
inline MobilityStack five_province_flows()
{
    Eigen::MatrixXd rows(5, 5);
    // clang-format off
    rows << 0,     1.0/2, 1.0/4, 1.0/8, 1.0/8,
            1.0/2, 0,     1.0/4, 1.0/4, 0,
            1.0/4, 1.0/4, 0,     1.0/2, 0,
            0,     1.0/8, 1.0/2, 0,     3.0/8,
            1.0/4, 0,     0,     3.0/4, 0;
    // clang-format on
    Eigen::MatrixXd base = 2.0 * rows;
    base.diagonal().setConstant(5.0);
    Eigen::MatrixXd day1 = base, day2 = base;
    day1(0, 1) += 0.5;
    day2(0, 1) -= 0.5;
    day1(4, 3) -= 0.5;
    day2(4, 3) += 0.5;
    day1(2, 2) = 9.0;
    day2(2, 2) = 1.0;
    MobilityStack s;
    s.provinces = ProvinceIndex({"A", "B", "C", "D", "E"});
    s.days = {"2020-01-18", "2020-01-19"};
    s.flows = {day1, day2};
    return s;
}

/// Hand-computed weights for five_province_flows() with quantile_keep = 0.2.
inline Eigen::MatrixXd five_province_expected_weights()
{
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(5, 5);
    m(0, 1) = m(1, 0) = 0.5;
    m(2, 3) = m(3, 2) = 0.5;
    m(3, 4) = m(4, 3) = 0.5625;
    return m;
}

}  // namespace epibias::testing
