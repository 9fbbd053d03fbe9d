//! The 86-node rule published for the reference box.

#[allow(clippy::excessive_precision)]
pub(super) const NODES_AND_WEIGHTS: [(f64, f64); 86] = [
    (0.0960748783232733, 0.1933002284075283),
    (0.2949311558758212, 0.2064005047360611),
    (0.5121811831688609, 0.2293690006634405),
    (0.7553750530381257, 0.2574584689846101),
    (1.0272554775524241, 0.2860863008101612),
    (1.3267469591800769, 0.3123806483750251),
    (1.6509109783729810, 0.3353906370922179),
    (1.9964656597608781, 0.3552203181130367),
    (2.3604331716760738, 0.3722929241325456),
    (2.7402749478447399, 0.3870336516793261),
    (3.1338448880682450, 0.3998022537083804),
    (3.5393213277133500, 0.4108896687408796),
    (3.9551382871240710, 0.4205230182176792),
    (4.3799500415428971, 0.4289035535544789),
    (4.8125843418627330, 0.4361897874230700),
    (5.2520252807076444, 0.4425587482527165),
    (5.6973962780821781, 0.4480785412063698),
    (6.1479398698978196, 0.4528922343761104),
    (6.6029703189280022, 0.4571127652712647),
    (7.0619657471053916, 0.4607536593597344),
    (7.5244050646589304, 0.4640030341808996),
    (7.9898781249339503, 0.4668744890692324),
    (8.4580188390522402, 0.4693377032983527),
    (8.9284697412154603, 0.4715695985713800),
    (9.4010606000280621, 0.4735626358176499),
    (9.8755021184860947, 0.4753261760015748),
    (10.3515866576509996, 0.4768203234940871),
    (10.8290813405759305, 0.4782250403991462),
    (11.3078856905533307, 0.4795013762603529),
    (11.7878547186769005, 0.4806019700535451),
    (12.2690444362196605, 0.4816049378992831),
    (12.7507923286660407, 0.4826033499503408),
    (13.2340308273640499, 0.4830779751411056),
    (13.7168180215943405, 0.4845298908539934),
    (14.2023546685620694, 0.4833485049199899),
    (14.6852339737999902, 0.4872979567198063),
    (15.1736671929864606, 0.4828723127156595),
    (15.6561205601530808, 0.4883987918117061),
    (16.1465532564475396, 0.4852092322682524),
    (16.6287678133340897, 0.4863731168868852),
    (17.1217168205720291, 0.4871456130687457),
    (17.6027784484422583, 0.4894715943022971),
    (18.0975219052295202, 0.4843933188273860),
    (18.5783668916359304, 0.4901095181946152),
    (19.0739289334232396, 0.4936700008508603),
    (19.5535187961381212, 0.4806551264127251),
    (20.0540157049340202, 0.4919980518793062),
    (20.5303087220011804, 0.4886725084331118),
    (21.0308285956013101, 0.4985884540483315),
    (21.5033438976054896, 0.4525339724563319),
    (22.0147025165826093, 0.5300911113825829),
    (22.4786227659423616, 0.4703295964417554),
    (22.9890428278831500, 0.5031381396430530),
    (23.4620311240316504, 0.4385610519729455),
    (23.9659051179655798, 0.5529348248583776),
    (24.4374955606510014, 0.4879736648158969),
    (24.9268582817982995, 0.4320150910275336),
    (25.4355862458376691, 0.5030088994396542),
    (25.8908822711706499, 0.4986129817647325),
    (26.4135765170375585, 0.5698981287926346),
    (26.8244665781450813, 0.3580010222446956),
    (27.3929596371526216, 0.4477770521368305),
    (27.8810764015625807, 0.6306236380217451),
    (28.2872085273741511, 0.5684848926018280),
    (28.9186103516193818, 0.1661641302432533),
    (29.3361902609053793, 0.7145700506865926),
    (29.7475402852299098, 0.3653264402765759),
    (30.2919596593750207, 0.7987670620900847),
    (31.1707837877708087, 0.6496969625503436),
    (31.7921709344750916, 0.6374198048803309),
    (32.0844373549515112, 0.4525776393523478),
    (32.8290834819148998, 0.5792967675329964),
    (33.6870452221527970, 1.2316989151794200),
    (34.6556177080743311, 0.6653181217090052),
    (35.5973697159031417, 0.7979748203948971),
    (36.0608079398967192, 0.9871538295211217),
    (37.4828497993489194, 1.1429690155529550),
    (38.1056387575873927, 0.3983778654241495),
    (38.4560335475650206, 0.7492963615598504),
    (39.9230354160448471, 1.7911442981045280),
    (41.8408663755605872, 1.9661520413352620),
    (43.7213283268615385, 1.6715931870761731),
    (44.2767860363890975, 0.2685526601061519),
    (45.6320859437675992, 1.7725506245674350),
    (47.5466594857420191, 1.9715488370126710),
    (49.4591701554423580, 1.5256479816263220),
];

/// Published `L²` kernel errors of the embedded rule as `(ν, ρ, error)`.
pub const REFERENCE_L2_ERRORS: [(f64, f64, f64); 15] = [
    (1.5, 0.1, 0.780e-4),
    (1.5, 0.3, 0.295e-5),
    (1.5, 0.5, 0.140e-5),
    (2.0, 0.1, 0.141e-4),
    (2.0, 0.3, 0.611e-6),
    (2.0, 0.5, 0.118e-4),
    (2.5, 0.1, 0.326e-5),
    (2.5, 0.3, 0.608e-6),
    (2.5, 0.5, 0.445e-6),
    (3.0, 0.1, 0.113e-5),
    (3.0, 0.3, 0.577e-6),
    (3.0, 0.5, 0.239e-6),
    (3.5, 0.1, 0.693e-6),
    (3.5, 0.3, 0.630e-6),
    (3.5, 0.5, 0.222e-6),
];

/// Looks up the published error for `(ν, ρ)`.
pub fn reference_l2_error(nu: f64, rho: f64) -> Option<f64> {
    REFERENCE_L2_ERRORS
        .iter()
        .find(|(n, r, _)| (n - nu).abs() < 1e-9 && (r - rho).abs() < 1e-9)
        .map(|t| t.2)
}
