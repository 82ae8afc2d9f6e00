// Build the package first: wasm-pack build crates/web --target web --out-dir www/pkg
import init, { RelightDemo, brdf_lobe, furnace_error } from "./pkg/relight_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function bindOutputs() {
  for (const input of document.querySelectorAll("input[type=range]")) {
    const out = input.parentElement.querySelector("output");
    const show = () => { out.textContent = input.value; };
    input.addEventListener("input", show);
    show();
  }
}

function drawFrame(demo, ctx) {
  demo.set_light(num("sun-az"), num("sun-el"), num("sun-i"), num("sky"));
  demo.set_view(num("view-az"), num("view-el"));
  demo.set_samples(num("samples"));
  const t0 = performance.now();
  const rgba = demo.render_rgba();
  const size = demo.size();
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba.buffer), size, size), 0, 0);
  $("render-time").textContent = `${demo.point_count()} Gaussians, ${(performance.now() - t0).toFixed(0)} ms`;
}

function drawLobe(ctx) {
  const { width: w, height: h } = ctx.canvas;
  const values = brdf_lobe(num("rough"), num("metal"), num("view-angle"), 181);
  const peak = Math.max(...values, 1e-9);
  ctx.fillStyle = "#000";
  ctx.fillRect(0, 0, w, h);
  ctx.strokeStyle = "#444";
  ctx.beginPath();
  ctx.moveTo(0, h - 10);
  ctx.lineTo(w, h - 10);
  ctx.stroke();
  ctx.strokeStyle = "#fc6";
  ctx.beginPath();
  values.forEach((v, k) => {
    const theta = -Math.PI / 2 + (Math.PI * k) / (values.length - 1);
    const r = ((h - 20) * v) / peak;
    const x = w / 2 + r * Math.sin(theta);
    const y = h - 10 - r * Math.cos(theta);
    if (k === 0) ctx.moveTo(x, y); else ctx.lineTo(x, y);
  });
  ctx.stroke();
  const a = (num("view-angle") * Math.PI) / 180;
  ctx.strokeStyle = "#6af";
  ctx.beginPath();
  ctx.moveTo(w / 2, h - 10);
  ctx.lineTo(w / 2 - (h - 30) * Math.sin(a), h - 10 - (h - 30) * Math.cos(a));
  ctx.stroke();
}

function showFurnace() {
  $("furnace-err").textContent = `${(100 * furnace_error(num("furnace-n"), 50)).toFixed(3)} %`;
}

async function main() {
  await init();
  bindOutputs();
  const frame = $("frame");
  const demo = new RelightDemo(frame.width);
  const frameCtx = frame.getContext("2d");
  const lobeCtx = $("lobe").getContext("2d");
  let pending = false;
  const requestFrame = () => {
    if (pending) return;
    pending = true;
    requestAnimationFrame(() => { pending = false; drawFrame(demo, frameCtx); });
  };
  for (const id of ["sun-az", "sun-el", "sun-i", "sky", "view-az", "view-el", "samples"]) {
    $(id).addEventListener("input", requestFrame);
  }
  for (const id of ["rough", "metal", "view-angle"]) {
    $(id).addEventListener("input", () => drawLobe(lobeCtx));
  }
  $("furnace-n").addEventListener("input", showFurnace);
  drawFrame(demo, frameCtx);
  drawLobe(lobeCtx);
  showFurnace();
  $("status").textContent = "ready";
}

main().catch((e) => { $("status").textContent = `failed: ${e}`; });
