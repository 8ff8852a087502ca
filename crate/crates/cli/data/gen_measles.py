import numpy as np
beta,S0,I0,delta=0.45,4.0,0.002,1.4
def f(s,i): return -beta*s*i, beta*s*i-delta*i
h=0.001; s,i=S0,I0; I=[I0]
for w in range(1,53):
    for _ in range(1000):
        k1=f(s,i);k2=f(s+h/2*k1[0],i+h/2*k1[1]);k3=f(s+h/2*k2[0],i+h/2*k2[1]);k4=f(s+h*k3[0],i+h*k3[1])
        s+=h/6*(k1[0]+2*k2[0]+2*k3[0]+k4[0]); i+=h/6*(k1[1]+2*k2[1]+2*k3[1]+k4[1])
    I.append(i)
I=np.array(I); rng=np.random.default_rng(1948)
y=np.maximum(I+rng.normal(0,0.12*I+0.002),0)
print("t,y")
for t,v in enumerate(y): print(f"{t},{v:.4f}")
import sys; print(int(I.argmax()),I.max(),file=sys.stderr)
