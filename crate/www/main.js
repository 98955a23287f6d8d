import init, { solve, density, sample_paths } from "./pkg/obstacle_wasm.js";

const PRESETS = {
  put: `name = american-put
horizon = 1.0
[coefficients]
family = constant
a = 0.09
[driver]
family = linear
rate = 0.05
[obstacle]
family = american-put
strike = 1.0
[truncation]
lo = -3
hi = 3
`,
  parabola: `name = parabola
horizon = 0.5
[coefficients]
family = constant
a = 1.0
[driver]
family = linear
rate = 0.5
source = 1.2
[obstacle]
family = custom-polynomial
coeffs = 1, 0, -1
[truncation]
lo = -4
hi = 4
`,
  sine: `name = sine-coef
horizon = 1.0
[coefficients]
family = sine-coef
base = 1.0
amplitude = 0.5
decay = 1.0
[driver]
family = linear
rate = 0.05
[obstacle]
family = custom-polynomial
coeffs = 0.5, 0, -0.1
[terminal]
family = gaussian
amplitude = 1.0
width = 1.0
[truncation]
lo = -7
hi = 7
`,
};

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function axes(canvas, xs, ys) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const finite = ys.filter(Number.isFinite);
  let lo = Math.min(...finite), hi = Math.max(...finite);
  if (hi - lo < 1e-12) { lo -= 0.5; hi += 0.5; }
  const pad = 0.05 * (hi - lo);
  lo -= pad; hi += pad;
  const x0 = xs[0], x1 = xs[xs.length - 1];
  const px = (x) => ((x - x0) / (x1 - x0)) * canvas.width;
  const py = (y) => canvas.height - ((y - lo) / (hi - lo)) * canvas.height;
  ctx.fillStyle = "#666";
  ctx.font = "11px sans-serif";
  ctx.fillText(hi.toPrecision(3), 4, 12);
  ctx.fillText(lo.toPrecision(3), 4, canvas.height - 4);
  ctx.fillText(x0.toPrecision(3), 4, canvas.height / 2);
  ctx.fillText(x1.toPrecision(3), canvas.width - 40, canvas.height / 2);
  return { ctx, px, py };
}

function line(plot, xs, ys, color) {
  const { ctx, px, py } = plot;
  ctx.strokeStyle = color;
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(px(x), py(ys[i])) : ctx.moveTo(px(x), py(ys[i]))));
  ctx.stroke();
}

function run(f) {
  $("status").textContent = "";
  try {
    const t = performance.now();
    f();
    console.log(`done in ${(performance.now() - t).toFixed(0)} ms`);
  } catch (e) {
    $("status").textContent = String(e.message ?? e);
  }
}

function doSolve() {
  const v = solve($("scenario").value, num("nx"), num("nt"));
  const x = v.x(), u = v.u0(), h = v.h0();
  const plot = axes($("value"), Array.from(x), [...u, ...Array.from(h).filter((y) => y > -1e5)]);
  line(plot, x, h.map((y) => (y > -1e5 ? y : NaN)), "#c33");
  line(plot, x, u, "#236");
  const mask = v.contact(), n = x.length, m = v.t().length;
  const c = $("contact"), ctx = c.getContext("2d");
  const img = ctx.createImageData(n, m);
  for (let k = 0; k < m; k++) {
    for (let i = 0; i < n; i++) {
      const o = 4 * (k * n + i), on = mask[k * n + i] === 1;
      img.data[o] = on ? 200 : 245;
      img.data[o + 1] = on ? 60 : 245;
      img.data[o + 2] = on ? 60 : 245;
      img.data[o + 3] = 255;
    }
  }
  const tmp = new OffscreenCanvas(n, m);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.drawImage(tmp, 0, 0, c.width, c.height);
}

function doDensity() {
  const d = density($("scenario").value, num("nx"), num("nt"), num("x0"));
  const x = d.x(), p = d.p();
  line(axes($("dens"), Array.from(x), Array.from(p)), x, p, "#236");
  $("status").textContent = `interior mass ${d.mass().toFixed(6)}`;
}

function doPaths() {
  const r = sample_paths($("scenario").value, num("x0"), num("count"), num("nt"), num("seed"));
  const t = Array.from(r.t()), v = r.values(), n = t.length;
  const plot = axes($("trace"), t, Array.from(v));
  for (let j = 0; j < r.count(); j++) {
    line(plot, t, Array.from(v.subarray(j * n, (j + 1) * n)), `hsl(${(j * 47) % 360} 60% 40%)`);
  }
}

await init();
$("preset").onchange = () => ($("scenario").value = PRESETS[$("preset").value]);
$("scenario").value = PRESETS.put;
$("solve").onclick = () => run(doSolve);
$("density").onclick = () => run(doDensity);
$("paths").onclick = () => run(doPaths);
run(doSolve);
