/** Canvas helpers: the model's images are tiny (32x32), so every pane is
 * drawn at 4x zoom with nearest-neighbor scaling to keep pixels crisp. */

export const ZOOM = 4;

export function drawPane(canvas: HTMLCanvasElement, b64png: string | null): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  if (b64png === null) {
    ctx.fillStyle = "#222";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    return;
  }
  const img = new Image();
  img.onload = () => {
    canvas.width = img.width * ZOOM;
    canvas.height = img.height * ZOOM;
    ctx.imageSmoothingEnabled = false; // nearest neighbor
    ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
  };
  img.src = `data:image/png;base64,${b64png}`;
}

/** Read an uploaded file into the raw base64 PNG form the API expects. */
export function fileToB64Png(file: File): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onerror = () => reject(reader.error);
    reader.onload = () => {
      const url = reader.result as string; // data:<mime>;base64,<payload>
      resolve(url.slice(url.indexOf(",") + 1));
    };
    reader.readAsDataURL(file);
  });
}
