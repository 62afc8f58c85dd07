#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "test_support.hpp"
#include "unmixsr/sr_net.hpp"

using namespace unmixsr;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {

AbundanceMap uniform_simplex_map(int h, int w, int p, std::uint64_t seed) {
    AbundanceMap a = AbundanceMap::zeros(h, w, p);
    Rng rng(seed);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto frac = rng.dirichlet(p);
            for (int i = 0; i < p; ++i) a.at(i, y, x) = frac[i];
        }
    return a;
}

}  // namespace

TEST_SUITE_BEGIN("srnet");

TEST_CASE("super_resolve: 16x16x16 input at x4 gives 64x64x16") {
    Rng rng(1);
    SrNetwork net(SrConfig{16, 3, 8, 1, 4, true, DeconvMode::replicate}, rng);
    Scene scene = synth_scene(3, 16, 16, 16, 1, 5);
    AbundanceMap a = uniform_simplex_map(16, 16, 3, 2);
    HsiCube out = net.super_resolve(scene.cube, a);
    CHECK(out.h == 64);
    CHECK(out.w == 64);
    CHECK(out.bands == 16);
}

TEST_CASE("super_resolve: output shape contract across scales") {
    Rng rng(2);
    for (int scale : {2, 4, 8}) {
        SrNetwork net(SrConfig{4, 2, 4, 1, scale, true, DeconvMode::replicate}, rng);
        Scene scene = synth_scene(2, 6, 5, 4, 1, 9);
        AbundanceMap a = uniform_simplex_map(6, 5, 2, 3);
        HsiCube out = net.super_resolve(scene.cube, a);
        CHECK(out.h == 6 * scale);
        CHECK(out.w == 5 * scale);
        CHECK(out.bands == 4);
    }
    CHECK_THROWS_AS(SrNetwork(SrConfig{4, 2, 4, 1, 3, true, DeconvMode::replicate}, rng),
                    ConfigError);
}

TEST_CASE("super_resolve: zeroed parameters reduce to bicubic exactly") {
    Rng rng(3);
    SrNetwork net(SrConfig{5, 3, 8, 2, 2, true, DeconvMode::replicate}, rng);
    net.zero_parameters();
    Scene scene = synth_scene(3, 8, 7, 5, 1, 11);
    AbundanceMap a = uniform_simplex_map(8, 7, 3, 4);
    HsiCube out = net.super_resolve(scene.cube, a);
    HsiCube expected = bicubic_upsample(scene.cube, 2);
    CHECK(out.data == expected.data);
}

TEST_CASE("super_resolve: rejects mismatched abundances") {
    Rng rng(4);
    SrNetwork net(SrConfig{4, 2, 4, 1, 2, true, DeconvMode::replicate}, rng);
    Scene scene = synth_scene(2, 6, 6, 4, 1, 13);
    CHECK_THROWS_AS(net.super_resolve(scene.cube, uniform_simplex_map(5, 6, 2, 1)), ConfigError);
    CHECK_THROWS_AS(net.super_resolve(scene.cube, uniform_simplex_map(6, 6, 3, 1)), ConfigError);
}

TEST_CASE("bicubic op: matches the raster routine and passes gradcheck") {
    Rng rng(5);
    Tensor x = random_tensor({2, 4, 5}, rng, true, 0.0, 1.0);
    Tensor up = bicubic_upsample_op(x, 2);
    HsiCube cube;
    cube.h = 4;
    cube.w = 5;
    cube.bands = 2;
    cube.data = x.value();
    HsiCube ref = bicubic_upsample(cube, 2);
    CHECK(up.value() == ref.data);
    double err = gradcheck({x}, [&] { return testutil::project_to_scalar(bicubic_upsample_op(x, 2), 7); });
    CHECK(err < 1e-4);
}

TEST_CASE("mam_fuse: ablation switch is a bit-exact identity") {
    Rng rng(6);
    SrNetwork off(SrConfig{4, 2, 4, 1, 2, false, DeconvMode::replicate}, rng);
    Tensor f = random_tensor({4, 5, 5}, rng, false);
    Tensor a = random_tensor({2, 5, 5}, rng, false, 0.0, 1.0);
    Tensor fused = off.mam_fuse(f, a);
    CHECK(fused.node_id() == f.node_id());  // same tensor, not a copy
    CHECK(fused.value() == f.value());
}

TEST_CASE("mam_fuse: zero fusion conv is the identity, random weights are not") {
    Rng rng(7);
    SrNetwork net(SrConfig{4, 2, 4, 1, 2, true, DeconvMode::replicate}, rng);
    Tensor f = random_tensor({4, 5, 5}, rng, false);
    Tensor a = random_tensor({2, 5, 5}, rng, false, 0.0, 1.0);

    Tensor fused_random = net.mam_fuse(f, a);
    bool differs = false;
    for (std::size_t i = 0; i < f.value().size(); ++i)
        differs = differs || fused_random.value()[i] != f.value()[i];
    CHECK(differs);

    for (Parameter* p : net.parameters())
        if (p->name == "sr.mam.kernel" || p->name == "sr.mam.bias")
            std::fill(p->tensor.value().begin(), p->tensor.value().end(), 0.0);
    Tensor fused_zero = net.mam_fuse(f, a);
    CHECK(fused_zero.value() == f.value());
}

TEST_CASE("deconv_abundance: identity at n = 1, replication at n = 2") {
    AbundanceMap a = AbundanceMap::zeros(1, 1, 2);
    a.at(0, 0, 0) = 0.3;
    a.at(1, 0, 0) = 0.7;
    AbundanceMap same = deconv_abundance(a, 1);
    CHECK(same.data == a.data);
    AbundanceMap up = deconv_abundance(a, 2);
    CHECK(up.h == 2);
    CHECK(up.w == 2);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            CHECK(up.at(0, y, x) == 0.3);
            CHECK(up.at(1, y, x) == 0.7);
        }
}

TEST_CASE("deconv_abundance: block means of the output reproduce the input") {
    AbundanceMap a = uniform_simplex_map(3, 4, 3, 17);
    AbundanceMap up = deconv_abundance(a, 2);
    AbundanceMap back = block_average(up, 2);
    for (std::size_t i = 0; i < a.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(a.data[i]).epsilon(1e-15));
}

TEST_CASE("deconv_abundance: learned kernel starts as exact replication") {
    Rng rng(8);
    SrNetwork net(SrConfig{4, 3, 4, 1, 2, true, DeconvMode::learned}, rng);
    AbundanceMap a = uniform_simplex_map(3, 3, 3, 19);
    Tensor up = net.deconv_learned(to_tensor(a));
    AbundanceMap expected = deconv_abundance(a, 2);
    CHECK(up.value() == expected.data);
    SrNetwork replicate_net(SrConfig{4, 3, 4, 1, 2, true, DeconvMode::replicate}, rng);
    CHECK_THROWS_AS(replicate_net.deconv_learned(to_tensor(a)), ConfigError);
}

TEST_CASE("abun_loss: zero at replication, analytic single delta, oracle") {
    AbundanceMap a_lr = uniform_simplex_map(3, 3, 2, 23);
    AbundanceMap a_sr = deconv_abundance(a_lr, 2);
    CHECK(abun_loss(a_sr, a_lr, 2) == 0.0);

    AbundanceMap bumped = a_sr;
    bumped.data[5] += 0.125;  // one entry off by delta in an N-entry map
    double n_entries = static_cast<double>(bumped.data.size());
    CHECK(abun_loss(bumped, a_lr, 2) == doctest::Approx(0.125 / n_entries).epsilon(1e-12));

    Rng rng(29);
    AbundanceMap x = uniform_simplex_map(4, 4, 3, 31);
    AbundanceMap target = deconv_abundance(uniform_simplex_map(2, 2, 3, 37), 2);
    double ours = abun_loss(x, uniform_simplex_map(2, 2, 3, 37), 2);
    CHECK(std::fabs(ours - oracle::l1_mean(x.data, target.data)) <= 1e-12);

    CHECK_THROWS_AS(abun_loss(uniform_simplex_map(3, 3, 2, 1), a_lr, 2), ConfigError);
}

TEST_CASE("sr_loss_total: zero case, pinned weights, recomposition") {
    SrLossWeights w;
    CHECK(w.alpha == 0.1);
    CHECK(w.beta_ab == 0.2);
    CHECK(1.0 + w.alpha * 1.0 + w.beta_ab * 1.0 == 1.3);  // component sum with unit parts

    Scene scene = synth_scene(3, 8, 8, 6, 1, 41);
    AbundanceMap a_lr = uniform_simplex_map(4, 4, 3, 43);
    AbundanceMap a_sr = deconv_abundance(a_lr, 2);
    CHECK(sr_loss_total(scene.cube, scene.cube, a_sr, a_lr, 2, w) == 0.0);

    Rng rng(47);
    Tensor y_hr = random_tensor({6, 8, 8}, rng, false, 0.0, 1.0);
    Tensor y_sr = random_tensor({6, 8, 8}, rng, false, 0.0, 1.0);
    Tensor a_sr_t = random_tensor({3, 8, 8}, rng, false, 0.0, 1.0);
    Tensor target = to_tensor(deconv_abundance(a_lr, 2));
    SrLossParts parts = sr_loss_total(y_hr, y_sr, a_sr_t, target, w);
    double recomposed =
        parts.l1.item() + w.alpha * parts.sad.item() + w.beta_ab * parts.abun.item();
    CHECK(std::fabs(parts.total.item() - recomposed) <= 1e-15);
}

TEST_CASE("sr end to end: head-conv gradients flow through the frozen encoder") {
    Rng rng(53);
    UnmixingNetwork unmixing(UnmixingConfig{2, 2, 8, 1}, rng);
    unmixing.set_frozen(true);
    SrNetwork net(SrConfig{2, 2, 8, 1, 2, true, DeconvMode::replicate}, rng);

    Scene scene = synth_scene(2, 8, 8, 2, 1, 59);
    HsiCube lr = degrade(scene.cube, 2, 0.0, 0.0, 0);
    Tensor y_lr = to_tensor(lr);
    Tensor y_hr = to_tensor(scene.cube);
    Tensor a_lr = unmixing.encode(y_lr);
    CHECK(!a_lr.requires_grad());  // frozen net on constant input builds no graph
    Tensor target = to_tensor(deconv_abundance(to_abundance(a_lr), 2));

    Tensor head_kernel;
    for (Parameter* p : net.parameters()) {
        if (p->name == "sr.head.kernel") head_kernel = p->tensor;
        // the tail opens at zero, which would block every head gradient;
        // perturb it so the chain under test is live
        if (p->name == "sr.tail.kernel")
            for (auto& v : p->tensor.value()) v = rng.uniform(-0.3, 0.3);
    }
    REQUIRE(head_kernel.defined());

    auto forward = [&] {
        Tensor y_sr = net.forward(y_lr, a_lr);
        Tensor a_sr = unmixing.encode(y_sr);
        return sr_loss_total(y_hr, y_sr, a_sr, target).total;
    };
    double err = gradcheck({head_kernel}, forward);
    CHECK(err < 1e-3);
}

TEST_SUITE_END();
