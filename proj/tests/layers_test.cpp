// Conv / pool / linear / batchnorm / dropout / activations, forward oracles
// and backward behavior.

#include <gtest/gtest.h>

#include <cmath>

#include <mcnn/layers.hpp>

#include "test_util.hpp"

using namespace mcnn;
using mcnn::testutil::tensors_equal;
using mcnn::testutil::tensors_near;

// ---- conv ----------------------------------------------------------------------

TEST(Conv, OnesKernelCountsOverlap) {
    // 3x3 ones input, 3x3 ones kernel, pad 1: output counts covered cells
    Conv2d<double> conv("c", 1, 1, 3, 1, 1, 1, false);
    conv.weight().value.fill(1.0);
    Tensor<double> x = Tensor<double>::ones({1, 1, 3, 3});
    Tensor<double> y = conv.forward(x);
    const double expect[9] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
    ASSERT_EQ(y.numel(), 9u);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(y[i], expect[i]);
}

TEST(Conv, OutputExtentFormula) {
    EXPECT_EQ(conv_out_extent(224, 7, 2, 3), 112u);
    EXPECT_EQ(conv_out_extent(5, 3, 1, 1), 5u);
    EXPECT_EQ(conv_out_extent(8, 3, 2, 1), 4u);
    EXPECT_THROW(conv_out_extent(2, 5, 1, 1), std::invalid_argument);
}

TEST(Conv, BiasAddsPerChannel) {
    Conv2d<double> conv("c", 1, 2, 1, 1, 0, 1, true);
    conv.weight().value.fill(0.0);
    conv.bias().value[0] = 1.5;
    conv.bias().value[1] = -2.0;
    Tensor<double> x = Tensor<double>::ones({1, 1, 2, 2});
    Tensor<double> y = conv.forward(x);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_DOUBLE_EQ(y[i], 1.5);
        EXPECT_DOUBLE_EQ(y[4 + i], -2.0);
    }
}

TEST(Conv, DepthwiseMatchesPerChannelConv) {
    const std::size_t C = 3;
    Rng rng(5);
    Conv2d<double> dw("dw", C, C, 3, 1, 1, C, false);
    dw.init(rng);
    Tensor<double> x({2, C, 6, 6});
    testutil::fill_uniform(x, rng);
    Tensor<double> y = dw.forward(x);

    for (std::size_t c = 0; c < C; ++c) {
        Conv2d<double> single("s", 1, 1, 3, 1, 1, 1, false);
        for (std::size_t i = 0; i < 9; ++i)
            single.weight().value[i] = dw.weight().value[c * 9 + i];
        Tensor<double> xc({2, 1, 6, 6});
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t i = 0; i < 36; ++i)
                xc[n * 36 + i] = x[(n * C + c) * 36 + i];
        Tensor<double> yc = single.forward(xc);
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t i = 0; i < 36; ++i)
                EXPECT_NEAR(yc[n * 36 + i], y[(n * C + c) * 36 + i], 1e-12);
    }
}

TEST(Conv, GroupedMatchesManualSplit) {
    Rng rng(6);
    Conv2d<double> grouped("g", 4, 6, 3, 1, 1, 2, false);
    grouped.init(rng);
    Tensor<double> x({1, 4, 5, 5});
    testutil::fill_uniform(x, rng);
    Tensor<double> y = grouped.forward(x);

    // group g sees input channels [2g,2g+2) and fills output channels [3g,3g+3)
    for (std::size_t g = 0; g < 2; ++g) {
        Conv2d<double> part("p", 2, 3, 3, 1, 1, 1, false);
        for (std::size_t i = 0; i < part.weight().value.numel(); ++i)
            part.weight().value[i] = grouped.weight().value[g * 3 * 2 * 9 + i];
        Tensor<double> xg({1, 2, 5, 5});
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t i = 0; i < 25; ++i)
                xg[c * 25 + i] = x[(2 * g + c) * 25 + i];
        Tensor<double> yg = part.forward(xg);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < 25; ++i)
                EXPECT_NEAR(yg[c * 25 + i], y[(3 * g + c) * 25 + i], 1e-12);
    }
}

TEST(Conv, InitRespectsFanInBound) {
    Conv2d<float> conv("c", 8, 16, 3, 1, 1, 1, true);
    Rng rng(7);
    conv.init(rng);
    const float bound = std::sqrt(6.0f / (8 * 9));
    float mn = 1e9f, mx = -1e9f;
    for (std::size_t i = 0; i < conv.weight().value.numel(); ++i) {
        const float w = conv.weight().value[i];
        EXPECT_LE(std::fabs(w), bound);
        mn = std::min(mn, w);
        mx = std::max(mx, w);
    }
    EXPECT_LT(mn, -0.5f * bound);  // actually spreads over the range
    EXPECT_GT(mx, 0.5f * bound);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(conv.bias().value[i], 0.0f);
}

TEST(Conv, BackwardBeforeForwardThrows) {
    Conv2d<double> conv("c", 1, 1, 3, 1, 1, 1, false);
    Tensor<double> g({1, 1, 3, 3});
    EXPECT_THROW(conv.backward(g), std::invalid_argument);
}

TEST(Conv, GradsAccumulateAcrossBackwards) {
    Rng rng(8);
    Conv2d<double> conv("c", 2, 3, 3, 1, 1, 1, true);
    conv.init(rng);
    Tensor<double> x({1, 2, 4, 4});
    testutil::fill_uniform(x, rng);
    Tensor<double> y = conv.forward(x);
    Tensor<double> g = Tensor<double>::ones(y.shape());
    conv.backward(g);
    Tensor<double> once = conv.weight().grad;
    conv.backward(g);
    for (std::size_t i = 0; i < once.numel(); ++i)
        EXPECT_NEAR(conv.weight().grad[i], 2.0 * once[i], 1e-12);
    conv.weight().zero_grad();
    EXPECT_EQ(conv.weight().grad[0], 0.0);
}

// ---- pooling ---------------------------------------------------------------------

TEST(MaxPool, ForwardPicksMaxAndBackwardScatters) {
    MaxPool2d<double> pool(2, 2, 0);
    Tensor<double> x({1, 1, 2, 4});
    const double vals[8] = {1, 5, 2, 2, 3, 4, 8, 6};
    for (std::size_t i = 0; i < 8; ++i) x[i] = vals[i];
    Tensor<double> y = pool.forward(x);
    ASSERT_EQ(y.numel(), 2u);
    EXPECT_DOUBLE_EQ(y[0], 5.0);
    EXPECT_DOUBLE_EQ(y[1], 8.0);
    Tensor<double> g({1, 1, 1, 2});
    g[0] = 10.0;
    g[1] = 20.0;
    Tensor<double> gx = pool.backward(g);
    const double expect[8] = {0, 10, 0, 0, 0, 0, 20, 0};
    for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(gx[i], expect[i]);
}

TEST(MaxPool, TieGoesToFirst) {
    MaxPool2d<double> pool(2, 1, 0);
    Tensor<double> x = Tensor<double>::full({1, 1, 2, 2}, 3.0);
    pool.forward(x);
    Tensor<double> g = Tensor<double>::ones({1, 1, 1, 1});
    Tensor<double> gx = pool.backward(g);
    EXPECT_DOUBLE_EQ(gx[0], 1.0);  // first scan position wins
    EXPECT_DOUBLE_EQ(gx[1], 0.0);
    EXPECT_DOUBLE_EQ(gx[2], 0.0);
    EXPECT_DOUBLE_EQ(gx[3], 0.0);
}

TEST(MaxPool, PaddingActsAsMinusInfinity) {
    MaxPool2d<double> pool(3, 2, 1);
    Tensor<double> x = Tensor<double>::full({1, 1, 2, 2}, -5.0);
    Tensor<double> y = pool.forward(x);
    // padded cells never win even against negative inputs
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], -5.0);
}

TEST(AdaptivePool, BinPartition7to4) {
    // bins over 7 cells: [0,1) [1,3) [3,5) [5,7)
    AdaptiveAvgPool2d<double> pool(4, 4);
    Tensor<double> x({1, 1, 7, 7});
    for (std::size_t i = 0; i < 49; ++i) x[i] = static_cast<double>(i % 7);  // value = column
    Tensor<double> y = pool.forward(x);
    ASSERT_EQ(y.size(2), 4u);
    EXPECT_DOUBLE_EQ(y[0], 0.0);              // {0}
    EXPECT_DOUBLE_EQ(y[1], 1.5);              // {1,2}
    EXPECT_DOUBLE_EQ(y[2], 3.5);              // {3,4}
    EXPECT_DOUBLE_EQ(y[3], 5.5);              // {5,6}
}

TEST(AdaptivePool, IdentityWhenSameSize) {
    AdaptiveAvgPool2d<double> pool(3, 3);
    Rng rng(9);
    Tensor<double> x = testutil::random_tensor<double>({2, 2, 3, 3}, rng);
    EXPECT_TRUE(tensors_near(pool.forward(x), x, 1e-12));
}

TEST(AdaptivePool, GlobalAverage) {
    AdaptiveAvgPool2d<double> pool(1, 1);
    Tensor<double> x({1, 1, 2, 2});
    x[0] = 1;
    x[1] = 2;
    x[2] = 3;
    x[3] = 6;
    Tensor<double> y = pool.forward(x);
    EXPECT_DOUBLE_EQ(y[0], 3.0);
    Tensor<double> g({1, 1, 1, 1});
    g[0] = 4.0;
    Tensor<double> gx = pool.backward(g);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(gx[i], 1.0);
}

TEST(AdaptivePool, UpsamplingRejected) {
    AdaptiveAvgPool2d<double> pool(4, 4);
    Tensor<double> x({1, 1, 2, 2});
    EXPECT_THROW(pool.forward(x), std::invalid_argument);
}

// ---- linear --------------------------------------------------------------------

TEST(Linear, HandOracle) {
    // [1,2] * [[3],[4]] + 5 = 16
    Linear<double> lin("l", 2, 1);
    lin.weight().value[0] = 3.0;
    lin.weight().value[1] = 4.0;
    lin.bias().value[0] = 5.0;
    Tensor<double> x({1, 2});
    x[0] = 1.0;
    x[1] = 2.0;
    Tensor<double> y = lin.forward(x);
    EXPECT_DOUBLE_EQ(y[0], 16.0);
}

TEST(Linear, BackwardShapesAndValues) {
    Linear<double> lin("l", 2, 1);
    lin.weight().value[0] = 3.0;
    lin.weight().value[1] = 4.0;
    lin.bias().value[0] = 5.0;
    Tensor<double> x({1, 2});
    x[0] = 1.0;
    x[1] = 2.0;
    lin.forward(x);
    Tensor<double> g({1, 1});
    g[0] = 1.0;
    Tensor<double> gx = lin.backward(g);
    EXPECT_DOUBLE_EQ(gx[0], 3.0);  // dL/dx = W^T g
    EXPECT_DOUBLE_EQ(gx[1], 4.0);
    EXPECT_DOUBLE_EQ(lin.weight().grad[0], 1.0);  // g^T x
    EXPECT_DOUBLE_EQ(lin.weight().grad[1], 2.0);
    EXPECT_DOUBLE_EQ(lin.bias().grad[0], 1.0);
}

// ---- batchnorm ---------------------------------------------------------------------

TEST(BatchNorm, TrainModeNormalizesBatch) {
    BatchNorm2d<double> bn("bn", 2);
    bn.set_train(true);
    Rng rng(10);
    Tensor<double> x = testutil::random_tensor<double>({4, 2, 3, 3}, rng, -3.0, 5.0);
    Tensor<double> y = bn.forward(x);
    // per channel: mean 0, biased variance 1
    const std::size_t hw = 9, n = 4;
    for (std::size_t c = 0; c < 2; ++c) {
        double mean = 0.0, var = 0.0;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i) mean += y[(b * 2 + c) * hw + i];
        mean /= (n * hw);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i) {
                const double d = y[(b * 2 + c) * hw + i] - mean;
                var += d * d;
            }
        var /= (n * hw);
        EXPECT_NEAR(mean, 0.0, 1e-12);
        // normalizer is sqrt(var + 1e-5), so output variance sits eps/var below 1
        EXPECT_NEAR(var, 1.0, 1e-4);
        EXPECT_LT(var, 1.0);
    }
}

TEST(BatchNorm, GammaBetaAffine) {
    BatchNorm2d<double> bn("bn", 1);
    bn.set_train(true);
    bn.gamma().value[0] = 2.0;
    bn.beta().value[0] = 10.0;
    Rng rng(11);
    Tensor<double> x = testutil::random_tensor<double>({2, 1, 4, 4}, rng);
    Tensor<double> y = bn.forward(x);
    double mean = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) mean += y[i];
    mean /= y.numel();
    EXPECT_NEAR(mean, 10.0, 1e-12);
}

TEST(BatchNorm, EvalModeIsPureAndFrozen) {
    BatchNorm2d<double> bn("bn", 2);
    bn.set_train(true);
    Rng rng(12);
    for (int i = 0; i < 5; ++i) {
        Tensor<double> x = testutil::random_tensor<double>({3, 2, 4, 4}, rng, -2.0, 6.0);
        bn.forward(x);
    }
    ASSERT_TRUE(bn.initialized());
    Tensor<double> rm = bn.running_mean();
    Tensor<double> rv = bn.running_var();

    bn.set_train(false);
    Tensor<double> x = testutil::random_tensor<double>({2, 2, 4, 4}, rng);
    Tensor<double> y1 = bn.forward(x);
    Tensor<double> y2 = bn.forward(x);
    EXPECT_TRUE(tensors_equal(y1, y2));                    // same input, same output
    EXPECT_TRUE(tensors_equal(rm, bn.running_mean()));     // stats untouched in eval
    EXPECT_TRUE(tensors_equal(rv, bn.running_var()));

    // eval forward applies exactly (x - rm)/sqrt(rv + eps) * gamma + beta
    const std::size_t hw = 16;
    for (std::size_t c = 0; c < 2; ++c) {
        const double inv = 1.0 / std::sqrt(rv[c] + 1e-5);
        for (std::size_t i = 0; i < hw; ++i) {
            const double expect = (x[c * hw + i] - rm[c]) * inv;
            EXPECT_NEAR(y1[c * hw + i], expect, 1e-12);
        }
    }
}

TEST(BatchNorm, EvalBeforeAnyTrainingThrows) {
    BatchNorm2d<double> bn("bn", 1);
    bn.set_train(false);
    Tensor<double> x({1, 1, 2, 2});
    EXPECT_THROW(bn.forward(x), std::invalid_argument);
}

TEST(BatchNorm, RunningStatsUseUnbiasedVariance) {
    BatchNorm2d<double> bn("bn", 1, 0.1, 1e-5);
    bn.set_train(true);
    Tensor<double> x({2, 1, 1, 1});
    x[0] = 0.0;
    x[1] = 2.0;  // batch mean 1, biased var 1, unbiased var 2
    bn.forward(x);
    EXPECT_NEAR(bn.running_mean()[0], 0.1 * 1.0, 1e-12);
    EXPECT_NEAR(bn.running_var()[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-12);
}

// ---- dropout / activations ----------------------------------------------------------

TEST(Dropout, EvalAndRateZeroAreIdentity) {
    Dropout<double> drop(0.4);
    Rng rng(13);
    Tensor<double> x = testutil::random_tensor<double>({3, 7}, rng);
    Rng r1(1);
    EXPECT_TRUE(tensors_equal(drop.forward(x, false, r1), x));
    Dropout<double> zero(0.0);
    EXPECT_TRUE(tensors_equal(zero.forward(x, true, r1), x));
}

TEST(Dropout, InvertedScalingPreservesExpectation) {
    const double rate = 0.3;
    Dropout<double> drop(rate);
    Tensor<double> x = Tensor<double>::full({10, 10}, 1.0);
    Rng rng(14);
    double sum = 0.0;
    const int trials = 400;
    for (int t = 0; t < trials; ++t) {
        Tensor<double> y = drop.forward(x, true, rng);
        for (std::size_t i = 0; i < y.numel(); ++i) {
            // survivors are scaled by exactly 1/(1-rate)
            if (y[i] != 0.0) {
                EXPECT_NEAR(y[i], 1.0 / (1.0 - rate), 1e-12);
            }
            sum += y[i];
        }
    }
    const double mean = sum / (trials * 100.0);
    EXPECT_NEAR(mean, 1.0, 0.02);
}

TEST(Dropout, BackwardUsesSameMask) {
    Dropout<double> drop(0.5);
    Tensor<double> x = Tensor<double>::full({4, 4}, 2.0);
    Rng rng(15);
    Tensor<double> y = drop.forward(x, true, rng);
    Tensor<double> g = Tensor<double>::ones({4, 4});
    Tensor<double> gx = drop.backward(g);
    for (std::size_t i = 0; i < 16; ++i) {
        if (y[i] == 0.0) EXPECT_EQ(gx[i], 0.0);
        else EXPECT_NEAR(gx[i], 2.0, 1e-12);  // 1/(1-0.5)
    }
}

TEST(Activations, SigmoidForwardBackwardOracle) {
    Sigmoid<double> sig;
    Tensor<double> x({3});
    x[0] = 0.0;
    x[1] = 100.0;
    x[2] = -100.0;
    Tensor<double> y = sig.forward(x);
    EXPECT_DOUBLE_EQ(y[0], 0.5);
    EXPECT_NEAR(y[1], 1.0, 1e-12);
    EXPECT_NEAR(y[2], 0.0, 1e-12);
    Tensor<double> g = Tensor<double>::ones({3});
    Tensor<double> gx = sig.backward(g);
    EXPECT_DOUBLE_EQ(gx[0], 0.25);  // s(1-s) at s=0.5
}

TEST(Activations, ReluForwardBackward) {
    ReLU<double> relu;
    Tensor<double> x({4});
    x[0] = -1.0;
    x[1] = 0.0;
    x[2] = 2.0;
    x[3] = -0.5;
    Tensor<double> y = relu.forward(x);
    EXPECT_DOUBLE_EQ(y[0], 0.0);
    EXPECT_DOUBLE_EQ(y[2], 2.0);
    Tensor<double> g = Tensor<double>::full({4}, 3.0);
    Tensor<double> gx = relu.backward(g);
    EXPECT_DOUBLE_EQ(gx[0], 0.0);
    EXPECT_DOUBLE_EQ(gx[1], 0.0);  // gradient 0 at the kink
    EXPECT_DOUBLE_EQ(gx[2], 3.0);
    EXPECT_DOUBLE_EQ(gx[3], 0.0);
}

// ---- deterministic gemm kernels ------------------------------------------------------

TEST(Gemm, MatchesNaiveTripleLoop) {
    const std::size_t m = 4, k = 5, n = 3;
    Rng rng(16);
    std::vector<double> A(m * k), B(k * n), Bt(n * k), C1(m * n), C2(m * n), ref(m * n, 0.0);
    for (auto& v : A) v = rng.uniform(-1.0, 1.0);
    for (auto& v : B) v = rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) ref[i * n + j] += A[i * k + p] * B[p * n + j];

    blas::gemm_nn(A.data(), B.data(), C1.data(), m, k, n, false);
    for (std::size_t i = 0; i < m * n; ++i) EXPECT_NEAR(C1[i], ref[i], 1e-12);

    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) Bt[j * k + p] = B[p * n + j];
    blas::gemm_nt(A.data(), Bt.data(), C2.data(), m, k, n, false);
    for (std::size_t i = 0; i < m * n; ++i) EXPECT_NEAR(C2[i], ref[i], 1e-12);

    // accumulate flag adds on top
    blas::gemm_nn(A.data(), B.data(), C1.data(), m, k, n, true);
    for (std::size_t i = 0; i < m * n; ++i) EXPECT_NEAR(C1[i], 2.0 * ref[i], 1e-12);
}

TEST(Gemm, TnMatchesNaive) {
    const std::size_t m = 3, k = 4, n = 2;
    Rng rng(17);
    std::vector<double> At(k * m), B(k * n), C(m * n), ref(m * n, 0.0);
    for (auto& v : At) v = rng.uniform(-1.0, 1.0);
    for (auto& v : B) v = rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) ref[i * n + j] += At[p * m + i] * B[p * n + j];
    blas::gemm_tn(At.data(), B.data(), C.data(), m, k, n, false);
    for (std::size_t i = 0; i < m * n; ++i) EXPECT_NEAR(C[i], ref[i], 1e-12);
}
