//! Adaptive Dormand–Prince 8(5,3) integrator for complex state vectors.

use num_complex::Complex64;

use crate::error::{Error, Result};

// Dormand–Prince 8(5,3) tableau.
const A21: f64 = 5.26001519587677318785587544488E-2;
const A31: f64 = 1.97250569845378994544595329183E-2;
const A32: f64 = 5.91751709536136983633785987549E-2;
const A41: f64 = 2.95875854768068491816892993775E-2;
const A43: f64 = 8.87627564304205475450678981324E-2;
const A51: f64 = 2.41365134159266685502369798665E-1;
const A53: f64 = -8.84549479328286085344864962717E-1;
const A54: f64 = 9.24834003261792003115737966543E-1;
const A61: f64 = 3.7037037037037037037037037037E-2;
const A64: f64 = 1.70828608729473871279604482173E-1;
const A65: f64 = 1.25467687566822425016691814123E-1;
const A71: f64 = 3.7109375E-2;
const A74: f64 = 1.70252211019544039314978060272E-1;
const A75: f64 = 6.02165389804559606850219397283E-2;
const A76: f64 = -1.7578125E-2;
const A81: f64 = 3.70920001185047927108779319836E-2;
const A84: f64 = 1.70383925712239993810214054705E-1;
const A85: f64 = 1.07262030446373284651809199168E-1;
const A86: f64 = -1.53194377486244017527936158236E-2;
const A87: f64 = 8.27378916381402288758473766002E-3;
const A91: f64 = 6.24110958716075717114429577812E-1;
const A94: f64 = -3.36089262944694129406857109825E0;
const A95: f64 = -8.68219346841726006818189891453E-1;
const A96: f64 = 2.75920996994467083049415600797E1;
const A97: f64 = 2.01540675504778934086186788979E1;
const A98: f64 = -4.34898841810699588477366255144E1;
const A101: f64 = 4.77662536438264365890433908527E-1;
const A104: f64 = -2.48811461997166764192642586468E0;
const A105: f64 = -5.90290826836842996371446475743E-1;
const A106: f64 = 2.12300514481811942347288949897E1;
const A107: f64 = 1.52792336328824235832596922938E1;
const A108: f64 = -3.32882109689848629194453265587E1;
const A109: f64 = -2.03312017085086261358222928593E-2;
const A111: f64 = -9.3714243008598732571704021658E-1;
const A114: f64 = 5.18637242884406370830023853209E0;
const A115: f64 = 1.09143734899672957818500254654E0;
const A116: f64 = -8.14978701074692612513997267357E0;
const A117: f64 = -1.85200656599969598641566180701E1;
const A118: f64 = 2.27394870993505042818970056734E1;
const A119: f64 = 2.49360555267965238987089396762E0;
const A1110: f64 = -3.0467644718982195003823669022E0;
const A121: f64 = 2.27331014751653820792359768449E0;
const A124: f64 = -1.05344954667372501984066689879E1;
const A125: f64 = -2.00087205822486249909675718444E0;
const A126: f64 = -1.79589318631187989172765950534E1;
const A127: f64 = 2.79488845294199600508499808837E1;
const A128: f64 = -2.85899827713502369474065508674E0;
const A129: f64 = -8.87285693353062954433549289258E0;
const A1210: f64 = 1.23605671757943030647266201528E1;
const A1211: f64 = 6.43392746015763530355970484046E-1;
const B1: f64 = 5.42937341165687622380535766363E-2;
const B6: f64 = 4.45031289275240888144113950566E0;
const B7: f64 = 1.89151789931450038304281599044E0;
const B8: f64 = -5.8012039600105847814672114227E0;
const B9: f64 = 3.1116436695781989440891606237E-1;
const B10: f64 = -1.52160949662516078556178806805E-1;
const B11: f64 = 2.01365400804030348374776537501E-1;
const B12: f64 = 4.47106157277725905176885569043E-2;
const BHH1: f64 = 0.244094488188976377952755905512E+00;
const BHH2: f64 = 0.733846688281611857341361741547E+00;
const BHH3: f64 = 0.220588235294117647058823529412E-01;
const C2: f64 = 0.526001519587677318785587544488E-01;
const C3: f64 = 0.789002279381515978178381316732E-01;
const C4: f64 = 0.118350341907227396726757197510E+00;
const C5: f64 = 0.281649658092772603273242802490E+00;
const C6: f64 = 0.333333333333333333333333333333E+00;
const C7: f64 = 0.25E+00;
const C8: f64 = 0.307692307692307692307692307692E+00;
const C9: f64 = 0.651282051282051282051282051282E+00;
const C10: f64 = 0.6E+00;
const C11: f64 = 0.857142857142857142857142857142E+00;
const ER1: f64 = 0.1312004499419488073250102996E-01;
const ER6: f64 = -0.1225156446376204440720569753E+01;
const ER7: f64 = -0.4957589496572501915214079952E+00;
const ER8: f64 = 0.1664377182454986536961530415E+01;
const ER9: f64 = -0.3503288487499736816886487290E+00;
const ER10: f64 = 0.3341791187130174790297318841E+00;
const ER11: f64 = 0.8192320648511571246570742613E-01;
const ER12: f64 = -0.2235530786388629525884427845E-01;

const SAFETY: f64 = 0.9;
const SHRINK_LIMIT: f64 = 0.333;
const GROW_LIMIT: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub min_step: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: f64::INFINITY,
            min_step: 1e-12,
        }
    }
}

/// Integrator state carried between calls so step-size history and the
/// derivative at the current point survive across sample points.
pub struct Dop853 {
    control: StepControl,
    n: usize,
    h: Option<f64>,
    k: [Vec<Complex64>; 12],
    f0_valid: bool,
    tmp: Vec<Complex64>,
    y_new: Vec<Complex64>,
    pub accepted: usize,
    pub rejected: usize,
}

impl Dop853 {
    pub fn new(n: usize, control: StepControl) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); n];
        Dop853 {
            control,
            n,
            h: None,
            k: std::array::from_fn(|_| z.clone()),
            f0_valid: false,
            tmp: z.clone(),
            y_new: z,
            accepted: 0,
            rejected: 0,
        }
    }

    pub fn control(&self) -> &StepControl {
        &self.control
    }

    fn initial_step(&self, y: &[Complex64], f0: &[Complex64]) -> f64 {
        let c = &self.control;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for (yi, fi) in y.iter().zip(f0) {
            let sc = c.abs_tol + c.rel_tol * yi.norm();
            d0 += (yi.norm() / sc).powi(2);
            d1 += (fi.norm() / sc).powi(2);
        }
        let (d0, d1) = ((d0 / self.n as f64).sqrt(), (d1 / self.n as f64).sqrt());
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h.min(c.max_step)
    }

    /// Advances `y` from `t` to exactly `t_end`.
    pub fn integrate<F>(&mut self, rhs: &mut F, t: f64, t_end: f64, y: &mut [Complex64]) -> Result<()>
    where
        F: FnMut(f64, &[Complex64], &mut [Complex64]),
    {
        assert_eq!(y.len(), self.n);
        let mut t = t;
        if !self.f0_valid {
            rhs(t, y, &mut self.k[0]);
            self.f0_valid = true;
        }
        let mut h = match self.h {
            Some(h) => h,
            None => self.initial_step(y, &self.k[0]),
        };
        while t < t_end {
            let remaining = t_end - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h.min(self.control.max_step) };
            if step < self.control.min_step && !last {
                return Err(Error::StepUnderflow { t, h: step });
            }
            let err = self.try_step(rhs, t, step, y);
            let fac = err.powf(0.125) / SAFETY;
            if err <= 1.0 {
                t = if last { t_end } else { t + step };
                y.copy_from_slice(&self.y_new);
                rhs(t, y, &mut self.k[0]);
                self.accepted += 1;
                let grow = 1.0 / fac.clamp(1.0 / GROW_LIMIT, 1.0 / SHRINK_LIMIT);
                // Landing on a sample point shortens the step; keep the
                // unconstrained proposal for the next interval.
                h = if last { h.max(step * grow) } else { step * grow };
                h = h.min(self.control.max_step);
            } else {
                self.rejected += 1;
                h = if err.is_finite() { step / fac.min(1.0 / SHRINK_LIMIT) } else { step * 0.2 };
                if h < self.control.min_step {
                    return Err(Error::StepUnderflow { t, h });
                }
            }
        }
        self.h = Some(h);
        Ok(())
    }

    fn try_step<F>(&mut self, rhs: &mut F, t: f64, h: f64, y: &[Complex64]) -> f64
    where
        F: FnMut(f64, &[Complex64], &mut [Complex64]),
    {
        let n = self.n;
        let [k1, k2, k3, k4, k5, k6, k7, k8, k9, k10, k11, k12] = &mut self.k;
        let tmp = &mut self.tmp;
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        rhs(t + C2 * h, tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * h, tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A43 * k3[i]);
        }
        rhs(t + C4 * h, tmp, k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * h, tmp, k5);
        for i in 0..n {
            tmp[i] = y[i] + h * (A61 * k1[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(t + C6 * h, tmp, k6);
        for i in 0..n {
            tmp[i] = y[i] + h * (A71 * k1[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(t + C7 * h, tmp, k7);
        for i in 0..n {
            tmp[i] = y[i] + h * (A81 * k1[i] + A84 * k4[i] + A85 * k5[i] + A86 * k6[i] + A87 * k7[i]);
        }
        rhs(t + C8 * h, tmp, k8);
        for i in 0..n {
            tmp[i] = y[i] + h * (A91 * k1[i] + A94 * k4[i] + A95 * k5[i] + A96 * k6[i] + A97 * k7[i] + A98 * k8[i]);
        }
        rhs(t + C9 * h, tmp, k9);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A101 * k1[i] + A104 * k4[i] + A105 * k5[i] + A106 * k6[i] + A107 * k7[i] + A108 * k8[i] + A109 * k9[i]);
        }
        rhs(t + C10 * h, tmp, k10);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A111 * k1[i]
                    + A114 * k4[i]
                    + A115 * k5[i]
                    + A116 * k6[i]
                    + A117 * k7[i]
                    + A118 * k8[i]
                    + A119 * k9[i]
                    + A1110 * k10[i]);
        }
        rhs(t + C11 * h, tmp, k11);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A121 * k1[i]
                    + A124 * k4[i]
                    + A125 * k5[i]
                    + A126 * k6[i]
                    + A127 * k7[i]
                    + A128 * k8[i]
                    + A129 * k9[i]
                    + A1210 * k10[i]
                    + A1211 * k11[i]);
        }
        rhs(t + h, tmp, k12);

        let c = &self.control;
        let y_new = &mut self.y_new;
        let mut err5 = 0.0;
        let mut err3 = 0.0;
        for i in 0..n {
            let slope = B1 * k1[i] + B6 * k6[i] + B7 * k7[i] + B8 * k8[i] + B9 * k9[i] + B10 * k10[i] + B11 * k11[i] + B12 * k12[i];
            y_new[i] = y[i] + h * slope;
            let sc = c.abs_tol + c.rel_tol * y[i].norm().max(y_new[i].norm());
            let e3 = slope - BHH1 * k1[i] - BHH2 * k9[i] - BHH3 * k12[i];
            let e5 = ER1 * k1[i] + ER6 * k6[i] + ER7 * k7[i] + ER8 * k8[i] + ER9 * k9[i] + ER10 * k10[i] + ER11 * k11[i] + ER12 * k12[i];
            err3 += (e3.norm() / sc).powi(2);
            err5 += (e5.norm() / sc).powi(2);
        }
        let deno = err5 + 0.01 * err3;
        let deno = if deno > 0.0 { deno } else { 1.0 };
        h * err5 / (deno * n as f64).sqrt()
    }
}
