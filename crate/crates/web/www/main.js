import init, {
  augment_image,
  augmentation_names,
  resize_image,
  safm_branch_maps,
  safm_param_curve,
} from "./pkg/cenet_web.js";

const SIZE = 128;
const $ = (id) => document.getElementById(id);
let source = null;

function pattern() {
  const px = new Uint8Array(SIZE * SIZE * 4);
  for (let y = 0; y < SIZE; y++) {
    for (let x = 0; x < SIZE; x++) {
      const i = 4 * (y * SIZE + x);
      const inSquare = Math.abs(x - 64) < 24 && Math.abs(y - 64) < 16;
      px[i] = inSquare ? 240 : x * 2;
      px[i + 1] = inSquare ? 200 : y * 2;
      px[i + 2] = inSquare ? 40 : 128;
      px[i + 3] = 255;
    }
  }
  return px;
}

function draw(canvas, rgba, width, height) {
  canvas.width = width;
  canvas.height = height;
  const img = new ImageData(new Uint8ClampedArray(rgba), width, height);
  canvas.getContext("2d").putImageData(img, 0, 0);
}

function run(fn) {
  try {
    $("status").textContent = "";
    fn();
  } catch (e) {
    $("status").textContent = String(e);
  }
}

function refresh() {
  draw($("source"), source, SIZE, SIZE);
  run(() => draw($("branches"), safm_branch_maps(source, SIZE, SIZE), 4 * SIZE, SIZE));
  applyAugmentation();
}

function applyAugmentation() {
  run(() => {
    const out = augment_image(
      source, SIZE, SIZE, $("op").value, Number($("amount").value), Number($("seed").value) >>> 0,
    );
    draw($("augmented"), out.pixels, SIZE, SIZE);
    $("desc").textContent = out.description;
  });
}

function plotCurve() {
  const data = safm_param_curve(Math.max(4, Number($("maxc").value)));
  const rows = [];
  for (let i = 0; i < data.length; i += 3) rows.push([data[i], data[i + 1], data[i + 2]]);
  const canvas = $("curve");
  const ctx = canvas.getContext("2d");
  const [w, h, pad] = [canvas.width, canvas.height, 40];
  ctx.clearRect(0, 0, w, h);
  const maxC = rows[rows.length - 1][0];
  const maxP = Math.max(...rows.map((r) => r[1]));
  const px = (c) => pad + ((w - 2 * pad) * c) / maxC;
  const py = (p) => h - pad - ((h - 2 * pad) * p) / maxP;
  ctx.strokeStyle = "#888";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  for (const [col, color] of [[1, "#c33"], [2, "#36c"]]) {
    ctx.strokeStyle = color;
    ctx.beginPath();
    rows.forEach((r, i) => (i ? ctx.lineTo(px(r[0]), py(r[col])) : ctx.moveTo(px(r[0]), py(r[col]))));
    ctx.stroke();
  }
  ctx.fillStyle = "#c33";
  ctx.fillText("standard", pad + 8, pad + 14);
  ctx.fillStyle = "#36c";
  ctx.fillText("depthwise-separable", pad + 8, pad + 28);
  ctx.fillStyle = "#222";
  ctx.fillText(`C = ${maxC}`, w - pad - 40, h - pad + 16);
  ctx.fillText(`${maxP}`, 2, pad);
  const pick = rows.filter((r) => [16, 32, 64, 128, 256, 512].includes(r[0]));
  $("table").textContent = ["C\tstandard\tseparable\treduction"]
    .concat(pick.map((r) => `${r[0]}\t${r[1]}\t${r[2]}\t${(100 * (1 - r[2] / r[1])).toFixed(1)}%`))
    .join("\n");
}

async function loadFile(file) {
  const bitmap = await createImageBitmap(file);
  const canvas = new OffscreenCanvas(bitmap.width, bitmap.height);
  const ctx = canvas.getContext("2d");
  ctx.drawImage(bitmap, 0, 0);
  const full = ctx.getImageData(0, 0, bitmap.width, bitmap.height).data;
  source = resize_image(new Uint8Array(full.buffer), bitmap.width, bitmap.height, SIZE, SIZE);
  refresh();
}

await init();
for (const name of augmentation_names()) {
  $("op").add(new Option(name, name, name === "rotate", name === "rotate"));
}
source = pattern();
$("apply").onclick = applyAugmentation;
$("plot").onclick = plotCurve;
$("file").onchange = (e) => e.target.files[0] && loadFile(e.target.files[0]).catch((err) => ($("status").textContent = String(err)));
refresh();
plotCurve();
