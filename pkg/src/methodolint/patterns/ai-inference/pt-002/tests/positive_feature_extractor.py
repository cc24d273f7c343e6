import torch


class SpectrumEncoder:
    def __init__(self, model, device="cpu"):
        self.model = model.to(device).eval()
        self.device = device

    def batch_features(self, spectra):
        tensor = torch.as_tensor(spectra, dtype=torch.float32, device=self.device)
        return self.model.encoder(tensor)

    def encode_catalog(self, catalog_batches):
        feats = [self.batch_features(b).cpu() for b in catalog_batches]
        return torch.cat(feats)
