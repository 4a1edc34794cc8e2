"""Near-Earth SGP4 mean-element propagation.

Implements the standard near-Earth branch of SGP4 with WGS-72 gravity
constants, producing TEME position/velocity in km and km/s. Element
sets with periods of 225 minutes or more need the deep-space extension,
which is out of scope here; they are rejected at construction time.
"""
from __future__ import annotations

import math
import warnings
from datetime import datetime, timezone

import numpy as np

from ..errors import DecayedOrbit, SimulationError, StaleElements, UnsupportedDeepSpace
from .tle import TwoLineElement

_TWOPI = 2.0 * math.pi
_X2O3 = 2.0 / 3.0
_DEG2RAD = math.pi / 180.0

# WGS-72 gravity model
MU_KM3_S2 = 398600.8
EARTH_RADIUS_KM = 6378.135
XKE = 60.0 / math.sqrt(EARTH_RADIUS_KM ** 3 / MU_KM3_S2)
_J2 = 0.001082616
_J3 = -0.00000253881
_J4 = -0.00000165597
_J3OJ2 = _J3 / _J2

STALE_AFTER_DAYS = 30.0

_ERROR_TEXT = {
    1: "mean eccentricity out of range",
    2: "mean motion is non-positive",
    4: "semi-latus rectum is negative",
}


def julian_date(t: datetime) -> float:
    """Julian date of a UTC datetime (fractional days included)."""
    if t.tzinfo is not None:
        t = t.astimezone(timezone.utc)
    year, month = t.year, t.month
    if month <= 2:
        year -= 1
        month += 12
    a = year // 100
    b = 2 - a + a // 4
    day_frac = (
        t.day
        + (t.hour + (t.minute + (t.second + t.microsecond * 1e-6) / 60.0) / 60.0)
        / 24.0
    )
    return (
        math.floor(365.25 * (year + 4716))
        + math.floor(30.6001 * (month + 1))
        + day_frac
        + b
        - 1524.5
    )


def gmst_radians(jd_ut1: float) -> float:
    """Greenwich mean sidereal time from a UT1 Julian date."""
    t = (jd_ut1 - 2451545.0) / 36525.0
    seconds = (
        67310.54841
        + (876600.0 * 3600.0 + 8640184.812866) * t
        + 0.093104 * t * t
        - 6.2e-6 * t * t * t
    )
    theta = math.radians(seconds / 240.0) % _TWOPI
    if theta < 0.0:
        theta += _TWOPI
    return theta


class Sgp4Propagator:
    """Analytic propagator for one near-Earth element set."""

    def __init__(self, tle: TwoLineElement):
        self.tle = tle
        self.epoch_jd = julian_date(tle.epoch)

        ecco = tle.eccentricity
        inclo = tle.inclination * _DEG2RAD
        nodeo = tle.raan * _DEG2RAD
        argpo = tle.arg_perigee * _DEG2RAD
        mo = tle.mean_anomaly * _DEG2RAD
        no_kozai = tle.mean_motion * _TWOPI / 1440.0
        bstar = tle.bstar

        # recover the original (un-Kozai) mean motion
        eccsq = ecco * ecco
        omeosq = 1.0 - eccsq
        rteosq = math.sqrt(omeosq)
        cosio = math.cos(inclo)
        cosio2 = cosio * cosio
        sinio = math.sin(inclo)

        ak = (XKE / no_kozai) ** _X2O3
        d1 = 0.75 * _J2 * (3.0 * cosio2 - 1.0) / (rteosq * omeosq)
        delta = d1 / (ak * ak)
        adel = ak * (1.0 - delta * delta - delta * (1.0 / 3.0 + 134.0 * delta * delta / 81.0))
        delta = d1 / (adel * adel)
        no_unkozai = no_kozai / (1.0 + delta)

        if _TWOPI / no_unkozai >= 225.0:
            raise UnsupportedDeepSpace(
                f"satellite {tle.satellite_number}: period "
                f"{_TWOPI / no_unkozai:.1f} min needs the deep-space model"
            )

        ao = (XKE / no_unkozai) ** _X2O3
        po = ao * omeosq
        con42 = 1.0 - 5.0 * cosio2
        con41 = -con42 - cosio2 - cosio2
        posq = po * po
        rp = ao * (1.0 - ecco)

        self.gsto = gmst_radians(self.epoch_jd)

        self.ecco = ecco
        self.inclo = inclo
        self.nodeo = nodeo
        self.argpo = argpo
        self.mo = mo
        self.bstar = bstar
        self.no_unkozai = no_unkozai
        self.con41 = con41

        self.isimp = rp < 220.0 / EARTH_RADIUS_KM + 1.0

        ss = 78.0 / EARTH_RADIUS_KM + 1.0
        qzms2t = ((120.0 - 78.0) / EARTH_RADIUS_KM) ** 4
        sfour = ss
        qzms24 = qzms2t
        perige = (rp - 1.0) * EARTH_RADIUS_KM
        if perige < 156.0:
            sfour = perige - 78.0
            if perige < 98.0:
                sfour = 20.0
            qzms24 = ((120.0 - sfour) / EARTH_RADIUS_KM) ** 4
            sfour = sfour / EARTH_RADIUS_KM + 1.0

        pinvsq = 1.0 / posq
        tsi = 1.0 / (ao - sfour)
        self.eta = ao * ecco * tsi
        etasq = self.eta * self.eta
        eeta = ecco * self.eta
        psisq = abs(1.0 - etasq)
        coef = qzms24 * tsi ** 4
        coef1 = coef / psisq ** 3.5
        cc2 = coef1 * no_unkozai * (
            ao * (1.0 + 1.5 * etasq + eeta * (4.0 + etasq))
            + 0.375 * _J2 * tsi / psisq * con41 * (8.0 + 3.0 * etasq * (8.0 + etasq))
        )
        self.cc1 = bstar * cc2
        cc3 = 0.0
        if ecco > 1.0e-4:
            cc3 = -2.0 * coef * tsi * _J3OJ2 * no_unkozai * sinio / ecco
        self.x1mth2 = 1.0 - cosio2
        self.cc4 = 2.0 * no_unkozai * coef1 * ao * omeosq * (
            self.eta * (2.0 + 0.5 * etasq)
            + ecco * (0.5 + 2.0 * etasq)
            - _J2 * tsi / (ao * psisq) * (
                -3.0 * con41 * (1.0 - 2.0 * eeta + etasq * (1.5 - 0.5 * eeta))
                + 0.75 * self.x1mth2 * (2.0 * etasq - eeta * (1.0 + etasq))
                * math.cos(2.0 * argpo)
            )
        )
        self.cc5 = 2.0 * coef1 * ao * omeosq * (1.0 + 2.75 * (etasq + eeta) + eeta * etasq)

        cosio4 = cosio2 * cosio2
        temp1 = 1.5 * _J2 * pinvsq * no_unkozai
        temp2 = 0.5 * temp1 * _J2 * pinvsq
        temp3 = -0.46875 * _J4 * pinvsq * pinvsq * no_unkozai
        self.mdot = (
            no_unkozai
            + 0.5 * temp1 * rteosq * con41
            + 0.0625 * temp2 * rteosq * (13.0 - 78.0 * cosio2 + 137.0 * cosio4)
        )
        self.argpdot = (
            -0.5 * temp1 * con42
            + 0.0625 * temp2 * (7.0 - 114.0 * cosio2 + 395.0 * cosio4)
            + temp3 * (3.0 - 36.0 * cosio2 + 49.0 * cosio4)
        )
        xhdot1 = -temp1 * cosio
        self.nodedot = xhdot1 + (
            0.5 * temp2 * (4.0 - 19.0 * cosio2)
            + 2.0 * temp3 * (3.0 - 7.0 * cosio2)
        ) * cosio
        self.omgcof = bstar * cc3 * math.cos(argpo)
        self.xmcof = 0.0
        if ecco > 1.0e-4:
            self.xmcof = -_X2O3 * coef * bstar / eeta
        self.nodecf = 3.5 * omeosq * xhdot1 * self.cc1
        self.t2cof = 1.5 * self.cc1
        # guard the retrograde-equatorial singularity at i = 180 deg
        if abs(cosio + 1.0) > 1.5e-12:
            self.xlcof = -0.25 * _J3OJ2 * sinio * (3.0 + 5.0 * cosio) / (1.0 + cosio)
        else:
            self.xlcof = -0.25 * _J3OJ2 * sinio * (3.0 + 5.0 * cosio) / 1.5e-12
        self.aycof = -0.5 * _J3OJ2 * sinio
        delmotemp = 1.0 + self.eta * math.cos(mo)
        self.delmo = delmotemp ** 3
        self.sinmao = math.sin(mo)
        self.x7thm1 = 7.0 * cosio2 - 1.0

        self.d2 = self.d3 = self.d4 = 0.0
        self.t3cof = self.t4cof = self.t5cof = 0.0
        if not self.isimp:
            cc1sq = self.cc1 * self.cc1
            self.d2 = 4.0 * ao * tsi * cc1sq
            temp = self.d2 * tsi * self.cc1 / 3.0
            self.d3 = (17.0 * ao + sfour) * temp
            self.d4 = 0.5 * temp * ao * tsi * (221.0 * ao + 31.0 * sfour) * self.cc1
            self.t3cof = self.d2 + 2.0 * cc1sq
            self.t4cof = 0.25 * (3.0 * self.d3 + self.cc1 * (12.0 * self.d2 + 10.0 * cc1sq))
            self.t5cof = 0.2 * (
                3.0 * self.d4
                + 12.0 * self.cc1 * self.d3
                + 6.0 * self.d2 * self.d2
                + 15.0 * cc1sq * (2.0 * self.d2 + cc1sq)
            )

        self.propagate_minutes(0.0)

    def propagate_minutes(self, tsince: float) -> tuple[np.ndarray, np.ndarray]:
        """TEME position (km) and velocity (km/s) at epoch + tsince minutes."""
        if abs(tsince) > STALE_AFTER_DAYS * 1440.0:
            warnings.warn(
                f"propagating {abs(tsince) / 1440.0:.1f} days from epoch; "
                "mean elements degrade beyond 30 days",
                StaleElements,
                stacklevel=2,
            )

        # secular gravity and atmospheric drag
        xmdf = self.mo + self.mdot * tsince
        argpdf = self.argpo + self.argpdot * tsince
        nodedf = self.nodeo + self.nodedot * tsince
        argpm = argpdf
        mm = xmdf
        t2 = tsince * tsince
        nodem = nodedf + self.nodecf * t2
        tempa = 1.0 - self.cc1 * tsince
        tempe = self.bstar * self.cc4 * tsince
        templ = self.t2cof * t2

        if not self.isimp:
            delomg = self.omgcof * tsince
            delmtemp = 1.0 + self.eta * math.cos(xmdf)
            delm = self.xmcof * (delmtemp ** 3 - self.delmo)
            temp = delomg + delm
            mm = xmdf + temp
            argpm = argpdf - temp
            t3 = t2 * tsince
            t4 = t3 * tsince
            tempa = tempa - self.d2 * t2 - self.d3 * t3 - self.d4 * t4
            tempe = tempe + self.bstar * self.cc5 * (math.sin(mm) - self.sinmao)
            templ = templ + self.t3cof * t3 + t4 * (self.t4cof + tsince * self.t5cof)

        nm = self.no_unkozai
        em = self.ecco
        inclm = self.inclo
        if nm <= 0.0:
            raise SimulationError("orbit", _ERROR_TEXT[2])

        am = (XKE / nm) ** _X2O3 * tempa * tempa
        nm = XKE / am ** 1.5
        em = em - tempe
        if em >= 1.0 or em < -0.001:
            raise SimulationError("orbit", _ERROR_TEXT[1] + f" (em={em:.6f})")
        if em < 1.0e-6:
            em = 1.0e-6
        mm = mm + self.no_unkozai * templ
        xlm = mm + argpm + nodem

        nodem = nodem % _TWOPI if nodem >= 0.0 else -(-nodem % _TWOPI)
        argpm = argpm % _TWOPI
        xlm = xlm % _TWOPI
        mm = (xlm - argpm - nodem) % _TWOPI

        sinim = math.sin(inclm)
        cosim = math.cos(inclm)

        # no lunar-solar periodics in the near-Earth branch
        ep, xincp, argpp, nodep, mp = em, inclm, argpm, nodem, mm
        sinip, cosip = sinim, cosim

        # long-period periodics
        axnl = ep * math.cos(argpp)
        temp = 1.0 / (am * (1.0 - ep * ep))
        aynl = ep * math.sin(argpp) + temp * self.aycof
        xl = mp + argpp + nodep + temp * self.xlcof * axnl

        # Kepler's equation
        u = (xl - nodep) % _TWOPI
        eo1 = u
        tem5 = 9999.9
        ktr = 1
        sineo1 = coseo1 = 0.0
        while abs(tem5) >= 1.0e-12 and ktr <= 10:
            sineo1 = math.sin(eo1)
            coseo1 = math.cos(eo1)
            tem5 = 1.0 - coseo1 * axnl - sineo1 * aynl
            tem5 = (u - aynl * coseo1 + axnl * sineo1 - eo1) / tem5
            if abs(tem5) >= 0.95:
                tem5 = 0.95 if tem5 > 0.0 else -0.95
            eo1 = eo1 + tem5
            ktr += 1

        # short-period preliminaries
        ecose = axnl * coseo1 + aynl * sineo1
        esine = axnl * sineo1 - aynl * coseo1
        el2 = axnl * axnl + aynl * aynl
        pl = am * (1.0 - el2)
        if pl < 0.0:
            raise SimulationError("orbit", _ERROR_TEXT[4])

        rl = am * (1.0 - ecose)
        rdotl = math.sqrt(am) * esine / rl
        rvdotl = math.sqrt(pl) / rl
        betal = math.sqrt(1.0 - el2)
        temp = esine / (1.0 + betal)
        sinu = am / rl * (sineo1 - aynl - axnl * temp)
        cosu = am / rl * (coseo1 - axnl + aynl * temp)
        su = math.atan2(sinu, cosu)
        sin2u = (cosu + cosu) * sinu
        cos2u = 1.0 - 2.0 * sinu * sinu
        temp = 1.0 / pl
        temp1 = 0.5 * _J2 * temp
        temp2 = temp1 * temp

        mrt = rl * (1.0 - 1.5 * temp2 * betal * self.con41) \
            + 0.5 * temp1 * self.x1mth2 * cos2u
        su = su - 0.25 * temp2 * self.x7thm1 * sin2u
        xnode = nodep + 1.5 * temp2 * cosip * sin2u
        xinc = xincp + 1.5 * temp2 * cosip * sinip * cos2u
        mvt = rdotl - nm * temp1 * self.x1mth2 * sin2u / XKE
        rvdot = rvdotl + nm * temp1 * (self.x1mth2 * cos2u + 1.5 * self.con41) / XKE

        # orientation vectors
        sinsu = math.sin(su)
        cossu = math.cos(su)
        snod = math.sin(xnode)
        cnod = math.cos(xnode)
        sini = math.sin(xinc)
        cosi = math.cos(xinc)
        xmx = -snod * cosi
        xmy = cnod * cosi
        ux = xmx * sinsu + cnod * cossu
        uy = xmy * sinsu + snod * cossu
        uz = sini * sinsu
        vx = xmx * cossu - cnod * sinsu
        vy = xmy * cossu - snod * sinsu
        vz = sini * cossu

        if mrt < 1.0:
            raise DecayedOrbit(
                f"satellite {self.tle.satellite_number} has decayed "
                f"(radius {mrt * EARTH_RADIUS_KM:.1f} km at t={tsince:.1f} min)"
            )

        mr = mrt * EARTH_RADIUS_KM
        vkmpersec = EARTH_RADIUS_KM * XKE / 60.0
        r = np.array([mr * ux, mr * uy, mr * uz])
        v = np.array([
            (mvt * ux + rvdot * vx) * vkmpersec,
            (mvt * uy + rvdot * vy) * vkmpersec,
            (mvt * uz + rvdot * vz) * vkmpersec,
        ])
        return r, v

    def propagate(self, t: datetime) -> tuple[np.ndarray, np.ndarray]:
        """TEME position/velocity at a UTC datetime."""
        tsince = (julian_date(t) - self.epoch_jd) * 1440.0
        return self.propagate_minutes(tsince)
