import torch, torch.nn as nn
torch.manual_seed(0)
class Tiny(nn.Module):
    def __init__(s, dim):
        super().__init__()
        s.conv = nn.Conv2d(3, 16, 8, stride=8)
        s.pool = nn.AdaptiveAvgPool2d(2)
        s.fc = nn.Linear(64, dim)
    def forward(s, x):
        return s.fc(torch.flatten(s.pool(torch.relu(s.conv(x))), 1))
for dim in (512, 64):
    m = Tiny(dim).eval()
    torch.onnx.export(m, torch.randn(1,3,224,224), f"tiny_vision_{dim}.onnx", input_names=["pixel_values"], output_names=["image_embeds"], dynamic_axes={"pixel_values":{0:"n"},"image_embeds":{0:"n"}}, opset_version=13, dynamo=False)
